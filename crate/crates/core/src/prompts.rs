//! Prompt templates for every oracle task.
//!
//! Rendering is plain `{slot}` replacement so that prompts are byte-stable and
//! their digests can key scripted fixtures.

use serde_json::{json, Value};

pub const CONTENT_FILTER: &str = r#"You are screening documentation pages before API extraction.
Decide whether the page below statically describes at least one callable REST API endpoint
(an HTTP method or URL pattern together with its parameters). Product landing pages, index
pages that only link to other pages, and pages whose endpoints are loaded by JavaScript do not count.

Answer with JSON: {"has_api_content": true|false, "reason": "<one sentence>"}

===
Page:
{document}
"#;

pub const DOC_QUALITY: &str = r#"You need to group the API documentation with the following standards:

Fully Organized: The documentation follows a well defined template, most likely to be from an API platform. It is well-structured, clear, and easy to understand. It includes detailed descriptions, example code, and explanations of how to use the API.
Semi-Organized: Lacks some structure, but still includes most of the necessary information. It may be missing some examples or descriptions, making it slightly more difficult to understand how to use the API.
Unorganized: Missing example or description, or the structure is unclear, making it difficult to understand how to use the API.

===
API Documentation:
{document}
"#;

pub const EXTRACT: &str = r#"Extract the REST API information from the documentation below into JSON.

Output schema (field names are exact):
{
  "title": "Title of the API (string or null)",
  "endpoints": [
    {
      "name": "Name of the endpoint",
      "description": "Description of the endpoint (string or null)",
      "method": "Method of the endpoint (GET, POST, PUT, PATCH, DELETE, HEAD, OPTIONS)",
      "url": ["URL of the endpoint, start with http:// or https://"],
      "headers": [],
      "required_parameters": [
        {"name": "Name of the parameter", "type": "Type of the parameter or null",
         "description": "Description of the parameter. If the parameter is categorical, please list all possible values.",
         "default": "Default value of the parameter or null", "example": "Example value of the parameter or null"}
      ],
      "optional_parameters": []
    }
  ]
}

===
Documentation:
{document}
"#;

pub const EXTRACT_RETRY_SUFFIX: &str = r#"
===
Your previous answer did not satisfy the schema:
{violations}
Return a corrected JSON object."#;

pub const FINGERPRINT: &str = r#"The API below has endpoints that are too complex to expose directly to an agent.
Propose at most 10 simple task-specific tools. For each, define one specific use case, the endpoint it uses,
the inputs it needs (only parameters that exist on that endpoint) and the expected output.

Answer with JSON:
{"fingerprints": [{"use_case": "<one sentence>", "endpoint": "<endpoint name>",
  "inputs": [{"name": "<parameter>", "semantic_type": "<type>", "example": "<value or null>"}],
  "output": "<expected result>"}]}

===
API JSON:
{api_json}
"#;

pub const JUDGE: &str = r#"Given an API description, response, and Python code, classify the response type:

- information: Valid response containing useful data as expected
- code_error: Error due to bugs in the Python code (syntax, logic, url path doesn't match, etc.)
- server_error: Server-side error (500, service unavailable, authentication error, etc.)
- request_error: Invalid operation due to bad parameters or unsupported operation (only choose this when other errors are not applicable and you think the code is correct but the response is an error)

API Description: {description}
API Response: {response}
Code: {code}
"#;

pub const REFINE: &str = r#"You are a Python debugging expert specializing in code analysis and correction. You will be provided with:
1. Error information.
2. API Json documentation: The API documentation includes all endpoints information. Please refer to the most relevant one based on the similarity of the Python function name and the endpoint's name.
3. Python code containing the function that interacts with APIs: The code may contain syntax errors, parameter issues, or other problems that prevent it from running correctly.
4. Parameters: The parameter examples that are passed to the function.
5. Configuration: The API configuration including base URL, headers, authentication details, and testing information.

Your task is to identify and fix errors in the provided code based on the error information and API documentation.

Requirements:
- IMPORTANT: Return ONLY the corrected code without explanations. The code you answered should be run successfully in a Python environment without any other human modifications.
- DON'T return the code with the wrap of ```python```.
- Ensure the code includes import statements for any necessary libraries.
- If the parameter examples are empty or not given, you should guess the correct values based on the API documentation and include them.
- If the configuration includes an "info" section with user_name, user_id, project_id, etc., use these values as realistic test parameters when the function needs user-specific data. These are real test values that should work with the API.
- Please write the doc after refining the code so that I can directly call code.__doc__. Be sure to include examples of the parameters in the docstring.
- Please check the parameters and make sure they are passed to the url correctly. Add optional parameters to allow customizable use of the tool when necessary.
- Use the provided configuration for base URL, headers, and authentication. Replace any hardcoded URLs or headers with the configuration values.
- You should **NEVER** edit the result_dict in main function.

Error Information:
{error}

API Documentation:
{api_doc}

Configuration:
{config}

Code to fix:
{code}

Candidate Parameter Values:
{params}
"#;

pub const PARAM_GUESS: &str = r#"You will be provided with the information of an API and its parameters. The example values of the parameters are missing. You need to guess the parameter values.
You may have failed several times before. If you guess with similar values, you may fail again. Please be innovative and try different values and formats.

Your previous failed guesses:
***history start
{history}
***history end

API Description:
{description}

Parameter Description:
{param_description}

Your Guess:
"#;

/// Substitute `{slot}` markers. Slots are replaced in order, so a value that
/// itself contains `{name}` text is never re-expanded by a later slot.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        for (name, value) in slots {
            let marker = format!("{{{name}}}");
            if after.starts_with(&marker) {
                out.push_str(value);
                rest = &after[marker.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

pub fn content_filter_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "has_api_content": {"type": "boolean"},
            "reason": {"type": "string"}
        },
        "required": ["has_api_content", "reason"]
    })
}

pub fn doc_quality_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "analysis": {"type": "string", "description": "The analysis of the API documentation. Make it within 300 characters."},
            "category": {"type": "string", "enum": ["Fully Organized", "Semi-Organized", "Unorganized"]}
        },
        "required": ["analysis", "category"]
    })
}

pub fn judge_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "response_type": {"type": "string", "enum": ["information", "code_error", "server_error", "request_error"]}
        },
        "required": ["response_type"]
    })
}

pub fn extract_schema() -> Value {
    let param = json!({
        "type": "object",
        "properties": {
            "name": {"type": "string"},
            "type": {"type": ["string", "null"]},
            "description": {"type": ["string", "null"]},
            "default": {},
            "example": {}
        },
        "required": ["name"]
    });
    json!({
        "type": "object",
        "properties": {
            "title": {"type": ["string", "null"]},
            "endpoints": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "name": {"type": "string"},
                        "description": {"type": ["string", "null"]},
                        "method": {"type": "string"},
                        "url": {"type": "array", "items": {"type": "string"}},
                        "headers": {"type": "array"},
                        "required_parameters": {"type": "array", "items": param},
                        "optional_parameters": {"type": "array", "items": param}
                    },
                    "required": ["name", "method", "url"]
                }
            }
        },
        "required": ["endpoints"]
    })
}

pub fn fingerprint_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "fingerprints": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "use_case": {"type": "string"},
                        "endpoint": {"type": "string"},
                        "inputs": {"type": "array", "items": {
                            "type": "object",
                            "properties": {
                                "name": {"type": "string"},
                                "semantic_type": {"type": "string"},
                                "example": {}
                            },
                            "required": ["name"]
                        }},
                        "output": {"type": "string"}
                    },
                    "required": ["use_case", "endpoint", "inputs", "output"]
                }
            }
        },
        "required": ["fingerprints"]
    })
}
