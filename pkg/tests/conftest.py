import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tooldraft.cli import build_tokenizer  # noqa: E402
from tooldraft.corpus import gen_corpus  # noqa: E402
from tooldraft.engine import Engine  # noqa: E402
from tooldraft.model import ScriptedModel  # noqa: E402
from tooldraft.schema import compile_schema, parse_tool_docs  # noqa: E402
from tooldraft.tokenizer import Tokenizer  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

FORGOT_DOC = {
    "tools": [
        {
            "name": "ForgotPassword",
            "description": "Reset a password.",
            "parameters": {
                "status": {"type": "string", "required": True, "enum": ["Forgot Password", "Verification Code"]},
                "username": {"type": "string", "required": True},
                "verification_code": {"type": "integer", "required": False},
            },
        },
        {
            "name": "GetUserToken",
            "description": "Get a token.",
            "parameters": {"username": {"type": "string", "required": True}},
        },
        {
            "name": "GetHealthData",
            "description": "Query health data.",
            "parameters": {
                "user_id": {"type": "string", "required": True},
                "time": {"type": "string", "required": True},
                "health_data": {"type": "object", "required": False},
            },
        },
    ]
}


class Workload:
    """Tokenizer, engine and scripted model over one generated corpus."""

    def __init__(self, n_tools, reps, seed):
        self.doc, self.records = gen_corpus(n_tools, reps, seed)
        self.schema = parse_tool_docs(self.doc)
        self.tokenizer = build_tokenizer(self.schema, self.records)
        self.engine = Engine(self.tokenizer, self.schema)
        tok = self.tokenizer
        self.gold = {r.query: tok.encode(r.gold) + [tok.eos_id] for r in self.records}
        self.model = ScriptedModel(
            {tuple(self.engine.context(r.query)): self.gold[r.query] for r in self.records},
            tok.vocab_size, tok.eos_id,
        )


@pytest.fixture(scope="session")
def repetition_workload():
    return Workload(5, 10, 0)


@pytest.fixture(scope="session")
def forgot_schema():
    return parse_tool_docs(FORGOT_DOC)


@pytest.fixture(scope="session")
def forgot_tokenizer():
    texts = ["ForgotPassword GetUserToken GetHealthData status username verification_code user_id time health_data",
             "Forgot Password Verification Code"]
    return Tokenizer.from_texts(texts)


@pytest.fixture(scope="session")
def forgot_compiled(forgot_schema, forgot_tokenizer):
    return compile_schema(forgot_schema, forgot_tokenizer)
