"""Prompt templates for the actor and the critic.

The critic templates live verbatim in lib/templates/ and are filled by plain
placeholder substitution so the wording is never paraphrased.
"""
import re
from pathlib import Path

from lib.actions import format_action
from lib.errors import PromptError

# --- Configuration ---
TEMPLATE_DIR = Path(__file__).parent / "templates"
DEFAULT_CURRENT_TIME = "2024-05-15 15:00:00 EST"

# Appended after the verbatim user prompt so that verdicts can be parsed.
VERDICT_PROTOCOL = (
    "Start your reply with [APPROVE] if the proposed action should be executed as is, "
    "or with [REVISE] followed by concise guidance for the agent."
)

CRITIC_PLACEHOLDERS = {
    "retail": ("<proposed action>", "<policies>", "<conversation history>"),
    "travel": ("<travel aspect>", "<recommendation>", "<options>", "<conversation history>"),
}

ACTOR_CONVENTIONS = """To call a tool, end your reply with a fenced block whose first line is the tool name followed by one `key: value` line per argument:

```tool_call
tool_name
argument: value
```

To make a final recommendation, end your reply with:

```recommendation
aspect: <aspect>
option_id: <option id>
```

Any reply without such a block is sent to the user as a message."""

TASK_EXTRACTION_PROMPT = """You are given a conversation between a user and an AI assistant. Infer the latent task the user was trying to accomplish.

Reply with one JSON object and nothing else, with these keys:
- "task_id": a short identifier
- "environment_id": "retail" or one of "travel-22", "travel-33", "travel-44"
- "instruction": the user's goal, written as an instruction to a simulated user
- "user_script_id": the same value as task_id
- "success_criterion": the ground-truth record for the environment
- "horizon": the maximum number of agent turns needed

Conversation:
<conversation>"""


def load_template(name):
    return (TEMPLATE_DIR / f"{name}.txt").read_text(encoding="utf-8").rstrip("\n")


def fill_template(template, values):
    """Substitutes every placeholder in one pass; a missing or None value is an error."""
    for placeholder, value in values.items():
        if value is None:
            raise PromptError(f"no value for placeholder {placeholder}")
        if placeholder not in template:
            raise PromptError(f"template has no placeholder {placeholder}")
    pattern = re.compile("|".join(re.escape(placeholder) for placeholder in values))
    return pattern.sub(lambda match: values[match.group(0)], template)


def build_critic_prompt(env_kind, history, proposal, context, current_time=DEFAULT_CURRENT_TIME, aspect=None):
    """Returns the (system, user) critic prompts for one proposal.

    `context` is the policy text for retail and the option listing for travel.
    For travel, `aspect` defaults to the aspect of the proposal.
    """
    if env_kind not in CRITIC_PLACEHOLDERS:
        raise PromptError(f"no critic templates for environment kind '{env_kind}'")
    action_text = format_action(proposal) if proposal is not None else None
    if env_kind == "retail":
        system = fill_template(load_template("retail_critic_system"), {"<current time>": current_time})
        values = {
            "<proposed action>": action_text,
            "<policies>": context,
            "<conversation history>": history,
        }
    else:
        system = load_template("travel_critic_system")
        values = {
            "<travel aspect>": aspect if aspect is not None else (proposal.aspect if proposal is not None else None),
            "<recommendation>": action_text,
            "<options>": context,
            "<conversation history>": history,
        }
    user = fill_template(load_template(f"{env_kind}_critic_user"), values)
    return system, f"{user}\n\n{VERDICT_PROTOCOL}"


def build_actor_system_prompt(env_kind, context):
    if env_kind == "retail":
        intro = (
            "You are a customer service agent for an online retail store. Help the user with their "
            "orders using the tools below, and follow the store policies exactly.\n\n"
            f"Store policies:\n{context}\n\n"
            "Tools: get_user_details(user_id), get_order_details(order_id), get_product_details(product_id), "
            "cancel_order(order_id, reason, payment_method), "
            "modify_items(order_id, item_id, new_variant_id, payment_method), "
            "modify_payment(order_id, payment_method).\n\n"
            "When every request is done, tell the user and ask whether there is anything else."
        )
    else:
        intro = (
            "You are a travel planning agent. Ask the user questions to uncover their preferences, "
            "search the options, and recommend exactly one option per travel aspect. Recommendations are "
            "final: give at most one option per travel aspect.\n\n"
            f"Travel aspects and options:\n{context}\n\n"
            "Tools: search_options(aspect)."
        )
    return f"{intro}\n\n{ACTOR_CONVENTIONS}"


def build_task_extraction_prompt(raw_dialogue):
    return fill_template(TASK_EXTRACTION_PROMPT, {"<conversation>": raw_dialogue})
