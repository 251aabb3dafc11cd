//! Python tool source emission and re-parsing.
//!
//! The emitted file has a fixed shape: imports, one function wrapping the
//! HTTP call, and a `__main__` block that calls the function with the example
//! binding and then runs the protected capture harness. The harness sits
//! between [`HARNESS_BEGIN`] and [`HARNESS_END`]; its SHA-256 is stored on
//! every ToolSpec as `harness_digest`.

use std::collections::BTreeMap;

use regex::Regex;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compiler::{normalize_url_template, HttpMethod, SuffixParam, ToolParam, ToolSpec};

pub const HARNESS_BEGIN: &str = "    # === DOC2TOOL HARNESS: DO NOT EDIT ===";
pub const HARNESS_END: &str = "    # === END HARNESS ===";

/// Lines between the harness markers, exactly as emitted.
pub const HARNESS_BODY: &str = r#"    r_json = None
    try:
        r_json = r.json()
    except Exception:
        pass
    result_dict = dict()
    result_dict['status_code'] = r.status_code
    result_dict['text'] = r.text
    result_dict['json'] = r_json
    result_dict['content'] = r.content.decode("utf-8", errors="replace")
    print(json.dumps(result_dict, indent=4))"#;

pub const REQUEST_TIMEOUT_SECS: u64 = 50;

pub fn digest_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn harness_digest() -> String {
    digest_text(HARNESS_BODY)
}

/// Text strictly between the harness markers, if both occur exactly once in
/// order.
pub fn harness_region(source: &str) -> Option<String> {
    let lines: Vec<&str> = source.split('\n').collect();
    let begins: Vec<usize> = lines.iter().enumerate().filter(|(_, l)| l.trim() == HARNESS_BEGIN.trim()).map(|(i, _)| i).collect();
    let ends: Vec<usize> = lines.iter().enumerate().filter(|(_, l)| l.trim() == HARNESS_END.trim()).map(|(i, _)| i).collect();
    match (begins.as_slice(), ends.as_slice()) {
        ([b], [e]) if b < e => Some(lines[b + 1..*e].join("\n")),
        _ => None,
    }
}

const PY_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del", "elif", "else", "except",
    "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while",
    "with", "yield", "kwargs", "requests", "json", "quote", "base_url", "params", "headers", "response",
];

/// A Python identifier for a parameter name.
pub fn py_ident(name: &str) -> String {
    let mut out: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    if PY_KEYWORDS.contains(&out.as_str()) {
        out.push('_');
    }
    out
}

/// Single-quoted Python string literal.
pub fn py_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn f_string_literal(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('{', "{{").replace('}', "}}")
}

fn docstring_text(s: &str) -> String {
    s.replace('\\', "\\\\").replace("\"\"\"", "\\\"\\\"\\\"")
}

fn method_fn(m: HttpMethod) -> &'static str {
    match m {
        HttpMethod::Get => "get",
        HttpMethod::Post => "post",
        HttpMethod::Put => "put",
        HttpMethod::Patch => "patch",
        HttpMethod::Delete => "delete",
        HttpMethod::Head => "head",
        HttpMethod::Options => "options",
    }
}

fn example_call_args(tool: &ToolSpec, binding: &BTreeMap<String, String>) -> String {
    let mut args = Vec::new();
    for p in tool.all_params() {
        if let Some(v) = binding.get(&p.name) {
            args.push(format!("{}={}", py_ident(&p.name), py_str(v)));
        }
    }
    for (k, v) in binding {
        if tool.param(k).is_none() {
            args.push(format!("{}={}", py_ident(k), py_str(v)));
        }
    }
    args.join(", ")
}

/// Render the tool as a standalone Python source file.
pub fn emit_executable_tool(tool: &ToolSpec) -> String {
    let fname = py_ident(&tool.name);
    let binding = tool.example_binding.clone().unwrap_or_default();
    let mut s = String::new();
    s.push_str("import requests\nimport json\nfrom urllib.parse import quote\n\n\n");

    let sig: Vec<String> = tool
        .all_params()
        .map(|p| {
            let default = p.default.as_deref().map(py_str).unwrap_or_else(|| "None".into());
            format!("{}={}", py_ident(&p.name), default)
        })
        .chain(std::iter::once("**kwargs".to_string()))
        .collect();
    s.push_str(&format!("def {fname}({}):\n", sig.join(", ")));

    s.push_str("    \"\"\"\n");
    for line in docstring_text(tool.description.trim()).lines() {
        s.push_str(&format!("    {line}\n").replace("    \n", "\n"));
    }
    let params: Vec<&ToolParam> = tool.all_params().collect();
    if !params.is_empty() {
        s.push_str("\n    Parameters:\n    -----------\n");
        for p in params {
            let ty = p.param_type.as_deref().unwrap_or("str");
            let opt = if p.required {
                String::new()
            } else {
                match &p.default {
                    Some(d) => format!(", optional (default={})", py_str(d)),
                    None => ", optional".into(),
                }
            };
            s.push_str(&format!("    {} : {}{}\n", py_ident(&p.name), docstring_text(ty).replace('\n', " "), opt));
            if let Some(d) = p.description.as_deref().filter(|d| !d.trim().is_empty()) {
                for line in docstring_text(d.trim()).lines() {
                    s.push_str(&format!("        {}\n", line.trim()));
                }
            }
            if let Some(ex) = binding.get(&p.name).or(p.example.as_ref()) {
                s.push_str(&format!("        Example: {}\n", docstring_text(&py_str(ex))));
            }
        }
    }
    s.push_str("\n    **kwargs : dict\n        Additional query parameters passed to the API.\n");
    if tool.example_binding.is_some() {
        s.push_str(&format!("\n    Examples:\n    ---------\n    >>> response = {fname}({})\n", docstring_text(&example_call_args(tool, &binding))));
    }
    s.push_str("    \"\"\"\n");

    for p in tool.required_params() {
        let id = py_ident(&p.name);
        s.push_str(&format!("    assert {id} is not None, 'Missing required parameter: {id}'\n"));
    }
    let mut url = String::new();
    let mut rest = tool.url_template.as_str();
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').map(|c| c + open).unwrap_or(rest.len() - 1);
        url.push_str(&f_string_literal(&rest[..open]));
        let name = &rest[open + 1..close];
        url.push_str(&format!("{{quote(str({}), safe='')}}", py_ident(name)));
        rest = &rest[close + 1..];
    }
    url.push_str(&f_string_literal(rest));
    s.push_str(&format!("    base_url = f\"{url}\"\n"));
    if let Some(SuffixParam { prefix, param }) = &tool.optional_suffix {
        let id = py_ident(&param.name);
        let default = param.default.as_deref().map(py_str).unwrap_or_else(|| "None".into());
        s.push_str(&format!("    if {id} is not None and {id} != '' and {id} != {default}:\n"));
        s.push_str(&format!("        base_url += f\"{}{{quote(str({id}), safe='')}}\"\n", f_string_literal(prefix)));
    }
    s.push_str("    params = dict()\n");
    for p in &tool.query_params {
        let id = py_ident(&p.name);
        s.push_str(&format!("    if {id} is not None:\n        params[{}] = {id}\n", py_str(p.wire())));
    }
    for (k, v) in &tool.fixed_query {
        s.push_str(&format!("    params[{}] = {}\n", py_str(k), py_str(v)));
    }
    s.push_str("    params.update(kwargs)\n");
    s.push_str("    headers = dict()\n");
    for p in &tool.header_params {
        let id = py_ident(&p.name);
        s.push_str(&format!("    if {id} is not None:\n        headers[{}] = {id}\n", py_str(p.wire())));
    }
    let payload = if tool.method.has_body() { "json=params" } else { "params=params" };
    let verify = if tool.verify_tls { "" } else { ", verify=False" };
    s.push_str(&format!(
        "    response = requests.{}(url=base_url, {payload}, headers=headers, timeout={REQUEST_TIMEOUT_SECS}{verify})\n",
        method_fn(tool.method)
    ));
    s.push_str("    return response\n\n\n");

    s.push_str("if __name__ == '__main__':\n");
    s.push_str(&format!("    r = {fname}({})\n", example_call_args(tool, &binding)));
    s.push_str(HARNESS_BEGIN);
    s.push('\n');
    s.push_str(HARNESS_BODY);
    s.push('\n');
    s.push_str(HARNESS_END);
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Parsing revised sources back into the IR

#[derive(Debug, Error, PartialEq)]
#[error("cannot parse tool source: {0}")]
pub struct SourceParseError(pub String);

fn perr(msg: impl Into<String>) -> SourceParseError {
    SourceParseError(msg.into())
}

/// Parse a Python literal as emitted (`None`, quoted strings, numbers, bools).
pub fn parse_py_literal(text: &str) -> Result<Option<String>, SourceParseError> {
    let t = text.trim();
    match t {
        "None" => return Ok(None),
        "True" => return Ok(Some("true".into())),
        "False" => return Ok(Some("false".into())),
        _ => {}
    }
    let quote = t.chars().next().ok_or_else(|| perr("empty literal"))?;
    if quote == '\'' || quote == '"' {
        if t.len() < 2 || !t.ends_with(quote) {
            return Err(perr(format!("unterminated string {t}")));
        }
        let inner = &t[1..t.len() - 1];
        let mut out = String::new();
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some(o) => out.push(o),
                    None => return Err(perr("dangling escape")),
                }
            } else {
                out.push(c);
            }
        }
        return Ok(Some(out));
    }
    if t.parse::<f64>().is_ok() {
        return Ok(Some(t.to_string()));
    }
    Err(perr(format!("unsupported literal {t}")))
}

/// Split `a=1, b='x, y'` at top-level commas.
fn split_args(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    let mut depth = 0i32;
    for c in text.chars() {
        if let Some(q) = quote {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => {
                quote = Some(c);
                cur.push(c);
            }
            '(' | '[' | '{' => {
                depth += 1;
                cur.push(c);
            }
            ')' | ']' | '}' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

/// `name=literal` pairs of a call's argument list.
pub fn parse_call_args(text: &str) -> Result<Vec<(String, Option<String>)>, SourceParseError> {
    split_args(text)
        .into_iter()
        .filter(|a| !a.starts_with("**"))
        .map(|a| {
            let (k, v) = a.split_once('=').ok_or_else(|| perr(format!("positional argument {a}")))?;
            Ok((k.trim().to_string(), parse_py_literal(v)?))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
struct DocParam {
    ty: Option<String>,
    description: Option<String>,
}

fn parse_docstring(doc: &str) -> (String, BTreeMap<String, DocParam>) {
    let lines: Vec<&str> = doc.lines().map(|l| l.strip_prefix("    ").unwrap_or(l)).collect();
    let mut desc = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let l = lines[i].trim();
        if l == "Parameters:" || l == "Examples:" || l.starts_with("**kwargs") {
            break;
        }
        desc.push(lines[i].trim_end());
        i += 1;
    }
    let description = desc.join("\n").trim().to_string();
    let header = Regex::new(r"^(\w+) : ([^,]+?)(?:, optional.*)?$").expect("static regex");
    let mut params = BTreeMap::new();
    let mut current: Option<(String, DocParam, Vec<String>)> = None;
    for line in &lines[i..] {
        if line.trim_start().starts_with("**kwargs") || line.trim() == "Examples:" {
            break;
        }
        if let Some(c) = header.captures(line.trim_end()) {
            if let Some((n, mut p, d)) = current.take() {
                p.description = (!d.is_empty()).then(|| d.join("\n"));
                params.insert(n, p);
            }
            current = Some((c[1].to_string(), DocParam { ty: Some(c[2].trim().to_string()), description: None }, Vec::new()));
        } else if let Some((_, _, d)) = current.as_mut() {
            let t = line.trim();
            if t.is_empty() || t.starts_with("Example: ") || t.starts_with("---") || t == "Examples:" || t.starts_with(">>>") {
                continue;
            }
            if line.starts_with("    ") {
                d.push(t.to_string());
            }
        }
    }
    if let Some((n, mut p, d)) = current.take() {
        p.description = (!d.is_empty()).then(|| d.join("\n"));
        params.insert(n, p);
    }
    (description, params)
}

/// Rebuild a ToolSpec revision from Python source. Parameters are matched to
/// the original tool by Python identifier so that metadata carries over.
pub fn parse_tool_source(source: &str, original: &ToolSpec) -> Result<ToolSpec, SourceParseError> {
    let def_re = Regex::new(r"(?m)^def (\w+)\((.*)\):\s*$").expect("static regex");
    let def = def_re.captures(source).ok_or_else(|| perr("no function definition"))?;
    let fname = def[1].to_string();
    let signature = parse_call_args(&def[2])?;
    let body_start = def.get(0).expect("match").end();
    let main_at = source.find("if __name__ == ").ok_or_else(|| perr("no __main__ block"))?;
    if main_at < body_start {
        return Err(perr("__main__ block before function"));
    }
    let body = &source[body_start..main_at];
    let main = &source[main_at..];

    let (description, doc_params) = match body.find("\"\"\"") {
        Some(a) => {
            let after = &body[a + 3..];
            let b = after.find("\"\"\"").ok_or_else(|| perr("unterminated docstring"))?;
            parse_docstring(&after[..b])
        }
        None => (String::new(), BTreeMap::new()),
    };

    let assert_re = Regex::new(r"(?m)^\s+assert (\w+) is not None").expect("static regex");
    let required: Vec<String> = assert_re.captures_iter(body).map(|c| c[1].to_string()).collect();

    let url_re = Regex::new(r#"(?m)^    base_url = f?"(.*)"\s*$"#).expect("static regex");
    let raw_url = url_re.captures(body).ok_or_else(|| perr("no base_url assignment"))?[1].to_string();
    let quoted = Regex::new(r"\{quote\(str\((\w+)\)(?:, safe='')?\)\}").expect("static regex");
    let plain = Regex::new(r"\{(\w+)\}").expect("static regex");
    let url = quoted.replace_all(&raw_url, "{$1}");
    let url = plain.replace_all(&url, "{$1}").replace("{{", "{").replace("}}", "}").replace("\\\"", "\"");
    let norm = normalize_url_template(&url).map_err(|e| perr(e.to_string()))?;

    let suffix_re = Regex::new(r#"(?m)^    if (\w+) is not None.*:\s*\n        base_url \+= f"(.*?)\{quote\(str\((\w+)\)(?:, safe='')?\)\}"\s*$"#)
        .expect("static regex");
    let suffix = suffix_re.captures(body).map(|c| (c[3].to_string(), c[2].to_string()));

    let param_re = Regex::new(r#"(?m)^\s+params\[(['"].*?['"])\] = (.+?)\s*$"#).expect("static regex");
    let header_re = Regex::new(r#"(?m)^\s+headers\[(['"].*?['"])\] = (.+?)\s*$"#).expect("static regex");
    let collect = |re: &Regex| -> Result<Vec<(String, String)>, SourceParseError> {
        re.captures_iter(body).map(|c| Ok((parse_py_literal(&c[1])?.unwrap_or_default(), c[2].to_string()))).collect()
    };
    let query_lines = collect(&param_re)?;
    let header_lines = collect(&header_re)?;

    let call_re = Regex::new(r"requests\.(get|post|put|patch|delete|head|options)\(([^\n]*)\)").expect("static regex");
    let call = call_re.captures(body).ok_or_else(|| perr("no requests call"))?;
    let method: HttpMethod = call[1].parse().map_err(|_| perr("bad method"))?;
    let verify_tls = !call[2].replace(' ', "").contains("verify=False");

    let main_call_re = Regex::new(&format!(r"(?m)^    r = {}\((.*)\)\s*$", regex::escape(&fname))).expect("escaped regex");
    let main_call = main_call_re.captures(main).ok_or_else(|| perr("main block does not call the tool"))?;
    let example_args = parse_call_args(&main_call[1])?;

    // IR names keyed by python identifier
    let by_ident: BTreeMap<String, &ToolParam> = original.all_params().map(|p| (py_ident(&p.name), p)).collect();
    let defaults: BTreeMap<String, Option<String>> = signature.into_iter().collect();
    let make_param = |ident: &str, wire: Option<&str>, is_required: bool| -> ToolParam {
        let mut p = by_ident.get(ident).map(|p| (*p).clone()).unwrap_or_else(|| ToolParam::bare(ident, is_required));
        if let Some(w) = wire {
            p.wire_name = (w != p.name).then(|| w.to_string());
        }
        p.required = is_required;
        p.default = defaults.get(ident).cloned().flatten();
        if let Some(d) = doc_params.get(ident) {
            if p.description.is_none() {
                p.description = d.description.clone();
            }
            if p.param_type.is_none() {
                p.param_type = d.ty.clone().filter(|t| t != "str");
            }
        }
        p
    };
    let ir_name = |ident: &str| by_ident.get(ident).map(|p| p.name.clone()).unwrap_or_else(|| ident.to_string());

    let path_params: Vec<ToolParam> = norm.path_params.iter().map(|n| make_param(n, None, true)).collect();
    let optional_suffix = suffix.map(|(ident, prefix)| SuffixParam { prefix, param: make_param(&ident, None, false) });
    let mut query_params = Vec::new();
    let mut fixed_query = BTreeMap::new();
    for (wire, rhs) in query_lines {
        if defaults.contains_key(rhs.as_str()) {
            query_params.push(make_param(&rhs, Some(&wire), required.contains(&rhs)));
        } else if let Ok(Some(v)) = parse_py_literal(&rhs) {
            fixed_query.insert(wire, v);
        }
    }
    let header_params: Vec<ToolParam> = header_lines
        .into_iter()
        .filter(|(_, rhs)| defaults.contains_key(rhs.as_str()))
        .map(|(wire, rhs)| make_param(&rhs, Some(&wire), required.contains(&rhs)))
        .collect();
    for p in path_params.iter().map(|p| py_ident(&p.name)) {
        if !defaults.contains_key(&p) {
            return Err(perr(format!("url placeholder {p} is not a function parameter")));
        }
    }

    let example_binding: BTreeMap<String, String> = example_args.into_iter().filter_map(|(k, v)| v.map(|v| (ir_name(&k), v))).collect();

    let mut revised = original.clone();
    revised.method = method;
    revised.url_template = norm.template;
    revised.path_params = path_params;
    revised.optional_suffix = optional_suffix;
    revised.query_params = query_params;
    revised.header_params = header_params;
    revised.fixed_query = fixed_query;
    revised.example_binding = Some(example_binding);
    revised.verify_tls = verify_tls;
    if !description.is_empty() {
        revised.description = description;
    }
    revised.revision = original.revision + 1;
    Ok(revised)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::ToolStatus;
    use crate::test_support::osrm_tool;

    #[test]
    fn osrm_source_shape() {
        let src = emit_executable_tool(&osrm_tool());
        assert!(src.contains("def general_request(profile=None, service=None, coordinates=None, format='json', **kwargs):"), "{src}");
        assert!(src.contains("    assert coordinates is not None, 'Missing required parameter: coordinates'\n"));
        assert!(src.contains("base_url = f\"http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{quote(str(profile), safe='')}/"));
        assert!(src.contains("timeout=50"));
        assert!(src.contains(
            "    r = general_request(profile='5000', service='route', coordinates='13.388860,52.517037;13.397634,52.529407', format='json')\n"
        ));
        for key in ["status_code", "text", "json", "content"] {
            assert!(src.contains(&format!("result_dict['{key}']")));
        }
        assert_eq!(harness_region(&src).as_deref(), Some(HARNESS_BODY));
        assert_eq!(digest_text(&harness_region(&src).unwrap()), osrm_tool().harness_digest);
    }

    #[test]
    fn docstring_lists_required_params_and_examples() {
        let src = emit_executable_tool(&osrm_tool());
        let doc = &src[src.find("\"\"\"").unwrap()..src.rfind("\"\"\"").unwrap()];
        for p in ["profile", "service", "coordinates"] {
            assert!(doc.contains(&format!("    {p} : string")), "{p}");
        }
        assert!(doc.contains("Example: '5000'"));
    }

    #[test]
    fn zero_param_tool() {
        let mut t = osrm_tool();
        t.url_template = "https://h/ping".into();
        t.path_params.clear();
        t.optional_suffix = None;
        t.example_binding = Some(BTreeMap::new());
        let src = emit_executable_tool(&t);
        assert!(src.contains("def general_request(**kwargs):"));
        assert!(src.contains("    r = general_request()\n"));
        assert_eq!(harness_region(&src).as_deref(), Some(HARNESS_BODY));
    }

    #[test]
    fn parse_round_trips_emitted_source() {
        let mut tool = osrm_tool();
        tool.query_params.push(ToolParam { wire_name: Some("from".into()), ..ToolParam::bare("from_q", false) });
        tool.fixed_query.insert("steps".into(), "true".into());
        tool.status = ToolStatus::Failed;
        let src = emit_executable_tool(&tool);
        let parsed = parse_tool_source(&src, &tool).unwrap();
        let mut expected = tool.clone();
        expected.revision = 1;
        assert_eq!(parsed, expected);
    }

    #[test]
    fn parse_picks_up_revised_example_and_url() {
        let tool = osrm_tool();
        let src = emit_executable_tool(&tool).replace("service='route'", "service='nearest'").replace("/v1/test/", "/v2/test/");
        let parsed = parse_tool_source(&src, &tool).unwrap();
        assert_eq!(parsed.example_binding.unwrap()["service"], "nearest");
        assert!(parsed.url_template.contains("/v2/test/{coordinates}"));
    }

    #[test]
    fn garbage_is_unparseable() {
        assert!(parse_tool_source("print('hi')", &osrm_tool()).is_err());
    }

    #[test]
    fn literals() {
        assert_eq!(parse_py_literal("'a\\'b'").unwrap(), Some("a'b".into()));
        assert_eq!(parse_py_literal("\"x\"").unwrap(), Some("x".into()));
        assert_eq!(parse_py_literal("None").unwrap(), None);
        assert_eq!(parse_py_literal("12").unwrap(), Some("12".into()));
        assert_eq!(parse_py_literal("True").unwrap(), Some("true".into()));
        assert!(parse_py_literal("foo()").is_err());
        assert_eq!(py_ident("api-key"), "api_key");
        assert_eq!(py_ident("from"), "from_");
        assert_eq!(py_ident("1x"), "_1x");
    }
}
