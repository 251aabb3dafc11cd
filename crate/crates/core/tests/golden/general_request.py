import requests
import json
from urllib.parse import quote


def general_request(profile=None, service=None, coordinates=None, format='json', **kwargs):
    """
    All OSRM HTTP requests use a common structure.

    Parameters:
    -----------
    profile : string
        Mode of transportation.
        Example: '5000'
    service : string
        One of the following values: 'route', 'nearest', 'table', 'match', 'trip', 'tile'.
        Example: 'route'
    coordinates : string
        String of format {longitude},{latitude};{longitude},{latitude}.
        Example: '13.388860,52.517037;13.397634,52.529407'
    format : string, optional (default='json')
        'json' or 'flatbuffers'. This parameter is optional and defaults to 'json'.
        Example: 'json'

    **kwargs : dict
        Additional query parameters passed to the API.

    Examples:
    ---------
    >>> response = general_request(profile='5000', service='route', coordinates='13.388860,52.517037;13.397634,52.529407', format='json')
    """
    assert profile is not None, 'Missing required parameter: profile'
    assert service is not None, 'Missing required parameter: service'
    assert coordinates is not None, 'Missing required parameter: coordinates'
    base_url = f"http://ec2-3-129-135-45.us-east-2.compute.amazonaws.com:{quote(str(profile), safe='')}/{quote(str(service), safe='')}/v1/test/{quote(str(coordinates), safe='')}"
    if format is not None and format != '' and format != 'json':
        base_url += f".{quote(str(format), safe='')}"
    params = dict()
    params.update(kwargs)
    headers = dict()
    response = requests.get(url=base_url, params=params, headers=headers, timeout=50)
    return response


if __name__ == '__main__':
    r = general_request(profile='5000', service='route', coordinates='13.388860,52.517037;13.397634,52.529407', format='json')
    # === DOC2TOOL HARNESS: DO NOT EDIT ===
    r_json = None
    try:
        r_json = r.json()
    except Exception:
        pass
    result_dict = dict()
    result_dict['status_code'] = r.status_code
    result_dict['text'] = r.text
    result_dict['json'] = r_json
    result_dict['content'] = r.content.decode("utf-8", errors="replace")
    print(json.dumps(result_dict, indent=4))
    # === END HARNESS ===
