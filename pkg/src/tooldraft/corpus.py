"""
Synthetic repeated-call workloads.

Each tool is invoked ``reps`` times with paraphrased queries; parameter values
come from small per-parameter pools, so calls to the same tool overlap the
way real repeated tool use does.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .schema import render_call
from .tokenizer import TOOL_CALL_CLOSE, TOOL_CALL_OPEN

# name, [(param, type, required, value pool)], query phrasings
_CATALOG: list[tuple[str, list[tuple[str, str, bool, list[Any]]], list[str]]] = [
    ("ForgotPassword", [
        ("status", "enum", True, ["Forgot Password", "Verification Code"]),
        ("username", "string", True, ["alice_smith", "bob_jones", "carol_white"]),
        ("email", "string", True, ["alice.smith@example.com", "bob.jones@example.org"]),
        ("verification_code", "integer", False, [970420, 123456]),
    ], [
        "I forgot my password, my username is {username} and my email is {email}.",
        "Please help me reset the password for {username} ({email}).",
        "Password reset needed for account {username}, email {email}.",
    ]),
    ("QueryHealthData", [
        ("user_id", "string", True, ["U-1024", "U-2048", "U-4096"]),
        ("start_time", "string", True, ["2023-03-01 00:00:00", "2023-04-01 00:00:00"]),
        ("end_time", "string", True, ["2023-03-31 23:59:59", "2023-04-30 23:59:59"]),
    ], [
        "Show the health data of user {user_id} between {start_time} and {end_time}.",
        "Can you pull health records for {user_id} from {start_time} to {end_time}?",
        "I need {user_id}'s health data for the period {start_time} - {end_time}.",
    ]),
    ("BookMeetingRoom", [
        ("room_name", "string", True, ["Everest Conference Room", "Kilimanjaro Room"]),
        ("date", "string", True, ["2024-05-20", "2024-05-21", "2024-05-22"]),
        ("start_time", "string", True, ["09:00", "14:30"]),
        ("attendees", "integer", False, [4, 8]),
    ], [
        "Book the {room_name} on {date} at {start_time}.",
        "Reserve {room_name} for {date}, starting {start_time}.",
        "Could you get me the {room_name} on {date} from {start_time}?",
    ]),
    ("SearchFlights", [
        ("origin", "string", True, ["San Francisco International Airport", "Boston Logan Airport"]),
        ("destination", "string", True, ["London Heathrow Airport", "Tokyo Haneda Airport"]),
        ("departure_date", "string", True, ["2024-07-04", "2024-08-15"]),
        ("cabin_class", "enum", False, ["economy", "business"]),
    ], [
        "Find flights from {origin} to {destination} on {departure_date}.",
        "Search for a flight {origin} -> {destination}, leaving {departure_date}.",
        "Any flights on {departure_date} from {origin} to {destination}?",
    ]),
    ("ModifyRegistration", [
        ("appointment_id", "string", True, ["APPT-90817", "APPT-55213"]),
        ("new_date", "string", True, ["2024-06-03 10:00", "2024-06-07 15:45"]),
        ("doctor_name", "string", True, ["Dr. Maria Gonzalez", "Dr. Kenji Watanabe"]),
    ], [
        "Move appointment {appointment_id} to {new_date} with {doctor_name}.",
        "Please reschedule {appointment_id} for {new_date}, doctor {doctor_name}.",
        "Change my registration {appointment_id}: new time {new_date}, see {doctor_name}.",
    ]),
    ("TranslateText", [
        ("text", "string", True, ["Where is the nearest train station?", "Thank you very much for your help."]),
        ("source_language", "string", True, ["English"]),
        ("target_language", "string", True, ["French", "Japanese", "German"]),
    ], [
        "Translate \"{text}\" from {source_language} to {target_language}.",
        "How do you say \"{text}\" in {target_language}? It is {source_language}.",
        "{source_language} to {target_language} please: {text}",
    ]),
    ("CreateInvoice", [
        ("customer_name", "string", True, ["Acme Corporation Ltd.", "Globex Industries Inc."]),
        ("amount", "number", True, [1250.5, 980.0]),
        ("currency", "enum", True, ["USD", "EUR"]),
        ("due_date", "string", False, ["2024-09-30", "2024-10-31"]),
    ], [
        "Create an invoice for {customer_name} of {amount} {currency}.",
        "Bill {customer_name} {amount} in {currency}.",
        "New invoice: {customer_name}, {amount} {currency}.",
    ]),
    ("WeatherForecast", [
        ("city", "string", True, ["Amsterdam, Netherlands", "Melbourne, Australia"]),
        ("days", "integer", True, [3, 7]),
        ("units", "enum", False, ["metric", "imperial"]),
    ], [
        "What's the weather in {city} for the next {days} days?",
        "Give me a {days}-day forecast for {city}.",
        "Forecast for {city}, {days} days ahead.",
    ]),
]

_VERBS = ["Fetch", "Update", "Delete", "List", "Archive", "Approve", "Export", "Import"]
_NOUNS = ["Order", "Ticket", "Report", "Contact", "Shipment", "Budget", "Playlist", "Vehicle"]


def _synthetic_tool(i: int):
    verb = _VERBS[i % len(_VERBS)]
    noun = _NOUNS[(i // len(_VERBS)) % len(_NOUNS)]
    name = f"{verb}{noun}" + (str(i // 64) if i >= 64 else "")
    lower = noun.lower()
    params = [
        (f"{lower}_id", "string", True, [f"{noun[:3].upper()}-{1000 + 37 * k}" for k in range(3)]),
        ("requested_by", "string", True, ["operations team lead", "regional account manager"]),
        ("note", "string", False, [f"{verb.lower()} as discussed in the weekly review", "urgent, customer waiting"]),
    ]
    phrasings = [
        f"{verb} {lower} {{{lower}_id}}, requested by {{requested_by}}.",
        f"Please {verb.lower()} the {lower} {{{lower}_id}} for the {{requested_by}}.",
        f"{{requested_by}} asks to {verb.lower()} {lower} {{{lower}_id}}.",
    ]
    return name, params, phrasings


def catalog(n_tools: int) -> list:
    out = list(_CATALOG[:n_tools])
    i = 0
    while len(out) < n_tools:
        out.append(_synthetic_tool(i))
        i += 1
    return out


def tool_doc(tools) -> dict:
    docs = []
    for name, params, _ in tools:
        pdoc = {}
        for pname, ptype, required, pool in params:
            spec: dict[str, Any] = {"type": "string" if ptype == "enum" else ptype, "required": required}
            if ptype == "enum":
                spec["enum"] = sorted({str(v) for v in pool})
            pdoc[pname] = spec
        docs.append({"name": name, "description": f"{name} tool.", "parameters": pdoc})
    return {"tools": docs}


@dataclass(frozen=True)
class CorpusRecord:
    session_id: str
    turn: int
    query: str
    gold: str | None = None
    tool: str | None = None

    def to_json(self) -> dict:
        rec: dict[str, Any] = {"session_id": self.session_id, "turn": self.turn, "query": self.query}
        if self.gold is not None:
            rec["gold"] = self.gold
        return rec


def gen_corpus(n_tools: int = 5, reps: int = 10, seed: int = 0,
               turns_per_session: int = 5) -> tuple[dict, list[CorpusRecord]]:
    """Schema document plus ``n_tools * reps`` records, deterministic per seed."""
    if n_tools < 1 or reps < 1:
        raise ValueError("need at least one tool and one repetition")
    rng = random.Random(seed)
    tools = catalog(n_tools)
    calls = []
    for name, params, phrasings in tools:
        for _ in range(reps):
            values = {}
            for pname, _ptype, required, pool in params:
                if required or rng.random() < 0.5:
                    values[pname] = rng.choice(pool)
            fill = {p[0]: values.get(p[0], p[3][0]) for p in params}
            query = rng.choice(phrasings).format(**fill)
            # emission order: required params first
            ordered = {p[0]: values[p[0]] for p in params if p[2] and p[0] in values}
            ordered.update({p[0]: values[p[0]] for p in params if not p[2] and p[0] in values})
            gold = TOOL_CALL_OPEN + render_call(name, ordered) + TOOL_CALL_CLOSE
            calls.append((name, query, gold))
    rng.shuffle(calls)
    records = [
        CorpusRecord(f"s{i // turns_per_session:04d}", i % turns_per_session, q, g, name)
        for i, (name, q, g) in enumerate(calls)
    ]
    return tool_doc(tools), records


def write_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


class CorpusError(ValueError):
    pass


def read_corpus(path: str | Path) -> list[CorpusRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc.msg}") from exc
            if not isinstance(rec, dict) or not isinstance(rec.get("query"), str):
                raise CorpusError(f"{path}:{lineno}: record needs a string query")
            key = (str(rec.get("session_id", "")), int(rec.get("turn", 0)))
            if key in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate (session_id, turn) {key}")
            seen.add(key)
            records.append(CorpusRecord(key[0], key[1], rec["query"], rec.get("gold")))
    return records
