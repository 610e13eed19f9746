import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tooldraft.errors import UnknownSymbol
from tooldraft.schema import render_call
from tooldraft.tokenizer import BASE_CHARS, TOOL_CALL_OPEN, Tokenizer, decode, encode, split_pieces


@pytest.fixture(scope="module")
def tok():
    return Tokenizer.from_texts(["ForgotPassword reset the password", '{"name": "x"}'])


def test_empty_string_encodes_to_nothing(tok):
    assert encode("", tok) == []


def test_tool_call_marker_is_one_token(tok):
    assert encode(TOOL_CALL_OPEN, tok) == [tok.tool_call_open_id]
    assert tok.eos_id == 0


def test_camel_case_and_punctuation_split():
    assert split_pieces("ForgotPassword") == ["Forgot", "Password"]
    assert split_pieces('{"a": 12}') == ["{", '"', "a", '"', ":", " 12", "}"]
    assert split_pieces("<tool_call>x</tool_call>") == ["<tool_call>", "x", "</tool_call>"]


def test_unknown_piece_falls_back_to_characters(tok):
    ids = encode("Zebra", tok)
    assert len(ids) == 5
    assert decode(ids, tok) == "Zebra"


def test_unknown_character_reports_offset(tok):
    with pytest.raises(UnknownSymbol) as err:
        encode("abé", tok)
    assert err.value.offset == 2


def test_structural_characters_are_single_tokens(tok):
    for ch in '{}[]",:':
        assert len(encode(ch, tok)) == 1


def test_round_trip_of_a_long_tool_call(tok):
    text = TOOL_CALL_OPEN + render_call("ForgotPassword", {
        "status": "Forgot Password", "username": "alice_smith", "email": "alice@example.com",
        "code": 970420, "note": "reset, then {notify} \"them\" now", "tags": ["a", "b"],
    })
    ids = encode(text, tok)
    assert len(ids) >= 50
    assert decode(ids, tok) == text


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="".join(BASE_CHARS), max_size=80))
def test_round_trip_property(text):
    tok = Tokenizer.from_texts(["the quick brown Fox", "jumps 42 times"])
    assert decode(encode(text, tok), tok) == text


def test_vocabulary_is_deterministic():
    a = Tokenizer.from_texts(["b a", "c"])
    b = Tokenizer.from_texts(["c", "b a"])
    assert a.vocabulary == b.vocabulary
