"""Text convention for actions exchanged with model backends.

An action is plain text, optionally followed by one fenced block:

    Let me cancel that order for you.

    ```tool_call
    cancel_order
    order_id: W1001
    reason: no longer needed
    payment_method: credit_card_4821
    ```

or a ```recommendation block with `aspect:` and `option_id:` lines. Text
without a well-formed block is a plain message.
"""
import re

from lib.models import ActionProposal

BLOCK_PATTERN = re.compile(r"```(tool_call|recommendation)[ \t]*\n(.*?)\n?```", re.DOTALL)


def format_action(action):
    """Renders a proposal in the fenced-block convention."""
    if action.kind == "message":
        return action.text
    if action.kind == "tool_call":
        body = [action.tool_name] + [f"{key}: {value}" for key, value in action.tool_args.items()]
        block = "```tool_call\n" + "\n".join(body) + "\n```"
    else:
        block = f"```recommendation\naspect: {action.aspect}\noption_id: {action.option_id}\n```"
    return f"{action.text}\n\n{block}" if action.text else block


def _parse_pairs(lines):
    pairs = {}
    for line in lines:
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep or not key.strip():
            return None
        pairs[key.strip()] = value.strip()
    return pairs


def parse_action(text):
    """Parses actor output into a proposal; malformed blocks degrade to a message."""
    text = (text or "").strip()
    match = BLOCK_PATTERN.search(text)
    if match:
        prose = (text[:match.start()] + text[match.end():]).strip() or None
        lines = match.group(2).strip().splitlines()
        if match.group(1) == "tool_call" and lines and ":" not in lines[0]:
            args = _parse_pairs(lines[1:])
            if args is not None:
                return ActionProposal.tool_call(lines[0].strip(), args, text=prose)
        elif match.group(1) == "recommendation":
            fields = _parse_pairs(lines)
            if fields and set(fields) == {"aspect", "option_id"}:
                return ActionProposal.recommendation(fields["aspect"], fields["option_id"], text=prose)
    return ActionProposal.message(text or "(no response)")
