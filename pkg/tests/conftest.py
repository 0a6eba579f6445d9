import json
from importlib import resources

import jsonschema
import pytest


def load_schema(name):
    return json.loads(resources.files("formopt").joinpath("schemas", name + ".schema.json").read_text())


@pytest.fixture
def validate():
    def check(instance, name):
        schema = load_schema(name)
        jsonschema.Draft202012Validator.check_schema(schema)
        jsonschema.validate(instance, schema, cls=jsonschema.Draft202012Validator)
    return check
