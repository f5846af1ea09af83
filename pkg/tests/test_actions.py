from lib.actions import format_action, parse_action
from lib.models import ActionProposal


def test_plain_text_is_a_message():
    assert parse_action("Which order would you like to cancel?") == ActionProposal.message(
        "Which order would you like to cancel?")


def test_tool_call_block_with_prose():
    text = (
        "Let me cancel that order for you.\n\n"
        "```tool_call\ncancel_order\norder_id: W1001\nreason: no longer needed\n"
        "payment_method: credit_card_1111\n```"
    )
    action = parse_action(text)
    assert action.kind == "tool_call"
    assert action.tool_name == "cancel_order"
    assert action.tool_args == {
        "order_id": "W1001", "payment_method": "credit_card_1111", "reason": "no longer needed",
    }
    assert action.text == "Let me cancel that order for you."


def test_tool_call_without_arguments():
    action = parse_action("```tool_call\nlist_orders\n```")
    assert action == ActionProposal.tool_call("list_orders", {})


def test_recommendation_block():
    action = parse_action("```recommendation\naspect: flight\noption_id: FL01\n```")
    assert action == ActionProposal.recommendation("flight", "FL01")


def test_recommendation_with_extra_field_degrades_to_message():
    text = "```recommendation\naspect: flight\noption_id: FL01\nprice: 300\n```"
    assert parse_action(text).kind == "message"


def test_malformed_argument_line_degrades_to_message():
    text = "```tool_call\ncancel_order\norder_id W1001\n```"
    action = parse_action(text)
    assert action.kind == "message"
    assert action.text == text


def test_empty_output_becomes_placeholder_message():
    assert parse_action("   ").text == "(no response)"
    assert parse_action(None).text == "(no response)"


def test_format_then_parse_preserves_each_kind():
    actions = [
        ActionProposal.message("Hello there."),
        ActionProposal.tool_call("get_order_details", {"order_id": "W1001"}, text="Checking."),
        ActionProposal.recommendation("apartment", "AP01", text="AP01 fits your budget."),
    ]
    for action in actions:
        assert parse_action(format_action(action)) == action
