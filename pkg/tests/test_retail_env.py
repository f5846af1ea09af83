import pytest

from lib import retail_env
from lib.environment import TOOL_REGISTRY
from lib.errors import ToolArgumentError, UnknownToolError
from lib.models import ActionProposal
from lib.suites import replay_actions, validate_fixture

from conftest import CARD, PAYPAL, USER_ID, cancel_call, modify_items_call


def rule_ids(violations):
    return [rule.rule_id for rule in violations]


def replayed(fixture, actions):
    env = retail_env.RetailEnvironment(fixture)
    env.reset()
    for turn, action in enumerate(actions, start=1):
        env.step(action, turn)
    return env


class TestTools:
    def test_cancel_pending_order(self, retail_state):
        state, observation = retail_env.execute_tool(retail_state, cancel_call())
        order = state.orders["W1001"]
        assert order.status == "cancelled"
        assert order.cancel_reason == "no longer needed"
        assert order.refund.payment_method == CARD
        assert order.refund.amount == 175.0
        assert observation.tool_result["status"] == "cancelled"
        assert retail_state.orders["W1001"].status == "pending"

    def test_cancel_shipped_order_is_an_in_band_error(self, retail_state):
        state, observation = retail_env.execute_tool(retail_state, cancel_call(order_id="W1002", payment_method=PAYPAL))
        assert observation.tool_result == {"error": "cannot cancel shipped order"}
        assert state == retail_state

    def test_unknown_order(self, retail_state):
        _, observation = retail_env.execute_tool(retail_state, cancel_call(order_id="W9999"))
        assert observation.tool_result == {"error": "order W9999 not found"}

    def test_modify_items_swaps_variant_and_settles(self, retail_state):
        state, _ = retail_env.execute_tool(retail_state, modify_items_call())
        order = state.orders["W1001"]
        assert order.status == "modified"
        assert order.items[0].variant_id == "desk_lamp-black"
        assert order.items[0].price == 135.24
        assert order.settlement.payment_method == CARD
        assert order.settlement.amount == 14.77

    def test_modify_items_unavailable_variant(self, retail_state):
        _, observation = retail_env.execute_tool(retail_state, modify_items_call(new_variant_id="desk_lamp-brass"))
        assert observation.tool_result == {"error": "variant desk_lamp-brass is not available"}

    def test_modify_shipped_order(self, retail_state):
        call = ActionProposal.tool_call("modify_payment", {"order_id": "W1002", "payment_method": CARD})
        _, observation = retail_env.execute_tool(retail_state, call)
        assert observation.tool_result == {"error": "cannot modify shipped order"}

    def test_modify_payment(self, retail_state):
        call = ActionProposal.tool_call("modify_payment", {"order_id": "W1001", "payment_method": PAYPAL})
        state, _ = retail_env.execute_tool(retail_state, call)
        assert state.orders["W1001"].payment_method == PAYPAL

    def test_user_details_list_orders(self, retail_state):
        call = ActionProposal.tool_call("get_user_details", {"user_id": USER_ID})
        _, observation = retail_env.execute_tool(retail_state, call)
        assert observation.tool_result["orders"] == ["W1001", "W1002"]

    def test_unknown_tool(self, retail_state):
        with pytest.raises(UnknownToolError):
            retail_env.execute_tool(retail_state, ActionProposal.tool_call("delete_account", {"user_id": USER_ID}))

    def test_missing_argument(self, retail_state):
        call = ActionProposal.tool_call("cancel_order", {"order_id": "W1001", "reason": "no longer needed"})
        with pytest.raises(ToolArgumentError) as excinfo:
            retail_env.execute_tool(retail_state, call)
        assert excinfo.value.argument == "payment_method"

    def test_non_string_argument(self, retail_state):
        call = ActionProposal.tool_call("get_order_details", {"order_id": 1001})
        with pytest.raises(ToolArgumentError):
            retail_env.execute_tool(retail_state, call)

    def test_read_only_tools_leave_every_state_unchanged(self, retail_state, generated_retail):
        registered = {tool for tool, mutating in TOOL_REGISTRY["retail"].items() if not mutating}
        assert registered == set(retail_env.READ_ONLY_TOOLS)
        states = [retail_state]
        for fixture in generated_retail:
            states.append(fixture.state)
            final_state = fixture.state
            for call in fixture.ground_truth.reference_calls:
                final_state, _ = retail_env.execute_tool(final_state, call)
            states.append(final_state)
        lookups = {
            "get_user_details": ("user_id", lambda state: [*state.users, "nobody_0000"]),
            "get_order_details": ("order_id", lambda state: [*state.orders, "W0000000"]),
            "get_product_details": ("product_id", lambda state: [*state.catalog, "hovercraft"]),
        }
        assert set(lookups) == registered
        calls = 0
        for state in states:
            for tool, (argument, values) in lookups.items():
                for value in values(state):
                    new_state, _ = retail_env.execute_tool(state, ActionProposal.tool_call(tool, {argument: value}))
                    assert new_state == state
                    calls += 1
        assert calls > 3 * len(states)


class TestPolicies:
    def test_reference_cancel_is_compliant(self, retail_state):
        assert retail_env.check_policies(retail_state, cancel_call()) == []

    def test_refund_to_other_method(self, retail_state):
        assert rule_ids(retail_env.check_policies(retail_state, cancel_call(payment_method=PAYPAL))) == ["P5"]

    def test_shipped_order_with_invalid_reason(self, retail_state):
        call = cancel_call(order_id="W1002", reason="other", payment_method=PAYPAL)
        assert rule_ids(retail_env.check_policies(retail_state, call)) == ["P3", "P4"]

    def test_unavailable_variant(self, retail_state):
        call = modify_items_call(new_variant_id="desk_lamp-brass")
        assert rule_ids(retail_env.check_policies(retail_state, call)) == ["P2"]

    def test_variant_of_another_product(self, retail_state):
        call = modify_items_call(new_variant_id="water_bottle-1l")
        assert rule_ids(retail_env.check_policies(retail_state, call)) == ["P6"]

    def test_payment_method_of_another_user(self, retail_state):
        call = ActionProposal.tool_call("modify_payment", {"order_id": "W1001",
                                                           "payment_method": retail_env.FOREIGN_PAYMENT_METHOD})
        assert rule_ids(retail_env.check_policies(retail_state, call)) == ["P7"]

    def test_same_payment_method(self, retail_state):
        call = ActionProposal.tool_call("modify_payment", {"order_id": "W1001", "payment_method": CARD})
        assert rule_ids(retail_env.check_policies(retail_state, call)) == ["P9"]

    def test_read_only_calls_are_unconstrained(self, retail_state):
        call = ActionProposal.tool_call("get_order_details", {"order_id": "W1002"})
        assert retail_env.check_policies(retail_state, call) == []

    def test_default_policies_are_consistent(self):
        assert retail_env.validate_policies(retail_env.DEFAULT_POLICIES) == []

    def test_inconsistent_policy_set(self):
        bad = retail_env.DEFAULT_POLICIES[:1] + (
            retail_env.DEFAULT_POLICIES[0],
            retail_env.PolicyRule(rule_id="X1", tools=("get_order_details",),
                                  require=retail_env.Condition(op="eq", left="$basket.total", right=0),
                                  message="nonsense"),
        )
        problems = retail_env.validate_policies(bad)
        assert any("duplicate" in p for p in problems)
        assert any("get_order_details" in p for p in problems)
        assert any("$basket.total" in p for p in problems)

    def test_rendered_policies_name_every_rule(self):
        text = retail_env.render_policies(retail_env.DEFAULT_POLICIES)
        assert text.splitlines()[0].startswith("P1 (modify_items): ")
        assert len(text.splitlines()) == len(retail_env.DEFAULT_POLICIES)

    def test_other_cancel_reason_is_not_what_the_user_asked(self, retail_fixture):
        requests = retail_fixture.ground_truth.reference_calls
        call = cancel_call(reason="ordered by mistake")
        assert retail_env.check_policies(retail_fixture.state, call) == []
        assert rule_ids(retail_env.check_policies(retail_fixture.state, call, requests=requests)) == ["P10"]
        judgement = retail_env.RetailEnvironment(retail_fixture).judge(call)
        assert judgement.error_mode == "off_task"
        assert judgement.expected.call_key() == cancel_call().call_key()

    def test_change_the_user_did_not_ask_for(self, retail_fixture):
        call = ActionProposal.tool_call("modify_payment", {"order_id": "W1001", "payment_method": PAYPAL})
        requests = retail_fixture.ground_truth.reference_calls
        assert rule_ids(retail_env.check_policies(retail_fixture.state, call, requests=requests)) == ["P10"]
        assert retail_env.check_policies(retail_fixture.state, cancel_call(), requests=requests) == []

    def test_policy_clean_calls_on_the_scripted_path_keep_reward_one(self, retail_fixture, retail_modify_fixture,
                                                                     generated_retail):
        fixtures = [retail_fixture, retail_modify_fixture, *generated_retail]
        clean = 0
        for fixture in fixtures:
            intended = list(fixture.intended_actions)
            requests = fixture.ground_truth.reference_calls
            for turn, table in sorted(fixture.perturbations.items()):
                state = replayed(fixture, intended[:turn - 1]).state
                for action in [intended[turn - 1], *table.values()]:
                    if action.kind != "tool_call":
                        continue
                    if retail_env.check_policies(state, action, fixture.policies, requests):
                        continue
                    path = intended[:turn - 1] + [action] + intended[turn:]
                    assert replay_actions(fixture, path).value == 1.0, (fixture.task.task_id, turn, action)
                    clean += 1
        assert clean == sum(len(fixture.perturbations) for fixture in fixtures)

    def test_policy_verdicts_agree_with_oracle_on_cleanly_executing_calls(self, generated_retail):
        """Wherever a mutating call executes without a tool error, a policy violation means the oracle objects."""
        for fixture in generated_retail:
            env = retail_env.RetailEnvironment(fixture)
            for table in fixture.perturbations.values():
                for action in table.values():
                    if action.kind != "tool_call":
                        continue
                    _, observation = retail_env.execute_tool(fixture.state, action)
                    if "error" in observation.tool_result:
                        continue
                    violations = retail_env.check_policies(fixture.state, action, fixture.policies)
                    judgement = env.judge(action)
                    if violations:
                        assert judgement.error_mode == "violate_constraint"
                    assert not judgement.consistent


class TestReward:
    def test_reference_path_scores_one(self, retail_fixture):
        state, _ = retail_env.execute_tool(retail_fixture.state, cancel_call())
        assert retail_env.reward(state, retail_fixture.ground_truth).value == 1.0

    def test_untouched_state_scores_zero(self, retail_fixture):
        value = retail_env.reward(retail_fixture.state, retail_fixture.ground_truth)
        assert value.value == 0.0
        assert retail_env.mismatched_paths(value) == [
            "orders.W1001.cancel_reason", "orders.W1001.refund.payment_method", "orders.W1001.status",
        ]

    def test_wrong_reason_is_caught(self, retail_fixture):
        state, _ = retail_env.execute_tool(retail_fixture.state, cancel_call(reason="ordered by mistake"))
        value = retail_env.reward(state, retail_fixture.ground_truth)
        assert retail_env.mismatched_paths(value) == ["orders.W1001.cancel_reason"]

    def test_empty_criterion_scores_one(self, retail_state):
        value = retail_env.reward(retail_state, retail_env.RetailGroundTruth(expected={}))
        assert value.value == 1.0
        assert value.breakdown == {"state": 1.0}

    def test_missing_path_does_not_match(self, retail_state):
        gt = retail_env.RetailGroundTruth(expected={"orders.W1001.items.5.variant_id": "desk_lamp-white"})
        assert retail_env.reward(retail_state, gt).value == 0.0

    def test_resolve_path_through_null(self, retail_state):
        document = retail_state.model_dump(mode="json")
        assert retail_env.resolve_path(document, "orders.W1001.refund.payment_method") is None
        assert retail_env.resolve_path(document, "orders.W1001.items.1.variant_id") == "water_bottle-500ml"


class TestEnvironment:
    def test_reset_returns_instruction(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        first = env.reset()
        assert first.turn_index == 1
        assert first.source == "user"
        assert first.content == retail_fixture.user_script[0]

    def test_intended_actions_reach_reward_one(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        outcomes = [env.step(action, turn) for turn, action in enumerate(retail_fixture.intended_actions, start=1)]
        assert [o.done for o in outcomes] == [False, False, False, True]
        assert outcomes[-1].observation.content == retail_env.STOP_MESSAGE
        assert env.evaluate().value == 1.0

    def test_clarifying_question_gets_the_request_restated(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        outcome = env.step(ActionProposal.message("Could you confirm the order id?"), 1)
        assert not outcome.done
        assert outcome.observation.source == "user"
        assert outcome.observation.content.startswith(retail_env.RESTATE_PREFIX)
        assert "Cancel order W1001 with the reason 'no longer needed'" in outcome.observation.content
        outcomes = [env.step(action, turn) for turn, action in enumerate(retail_fixture.intended_actions, start=2)]
        assert [o.done for o in outcomes] == [False, False, False, True]
        assert env.evaluate().value == 1.0

    def test_closing_before_the_request_is_done_ends_the_episode(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        outcome = env.step(ActionProposal.message(retail_env.CLOSING_MESSAGE), 1)
        assert outcome.done
        assert outcome.observation.content == retail_env.STOP_MESSAGE
        assert env.evaluate().value == 0.0

    def test_request_is_no_longer_outstanding_once_the_order_changed(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        env.step(cancel_call(payment_method=PAYPAL), 1)
        assert [c.call_key() for c in env.pending_reference_calls()] == [cancel_call().call_key()]
        assert env.outstanding_requests() == []
        assert env.step(ActionProposal.message("Anything else?"), 2).done

    def test_judge_messages_against_outstanding_requests(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        decline = retail_fixture.perturbations[3]["decline_request"]
        assert decline.kind == "message"
        judgement = env.judge(decline)
        assert judgement.error_mode == "hallucinate_constraint"
        assert judgement.expected.call_key() == cancel_call().call_key()
        assert not env.judge(ActionProposal.message(retail_env.CLOSING_MESSAGE)).consistent
        env.step(cancel_call(), 1)
        assert env.judge(ActionProposal.message(retail_env.CLOSING_MESSAGE)).consistent

    def test_tool_argument_errors_stay_in_band(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        outcome = env.step(ActionProposal.tool_call("cancel_order", {"order_id": "W1001"}), 1)
        assert "error" in outcome.observation.tool_result
        assert outcome.observation.turn_index == 2

    def test_recommendation_is_rejected(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        outcome = env.step(ActionProposal.recommendation("flight", "FL01"), 1)
        assert outcome.observation.source == "system"
        assert not outcome.done

    def test_copy_is_independent(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        clone = env.copy()
        clone.step(cancel_call(), 1)
        assert env.state.orders["W1001"].status == "pending"
        assert env.executed_calls == []
        assert clone.pending_reference_calls() == []

    def test_judge_reference_call_once(self, retail_fixture):
        env = retail_env.RetailEnvironment(retail_fixture)
        env.reset()
        assert env.judge(cancel_call()).consistent
        env.step(cancel_call(), 1)
        assert not env.judge(cancel_call()).consistent

    def test_judge_violation_offers_expected_call(self, retail_modify_fixture):
        env = retail_env.RetailEnvironment(retail_modify_fixture)
        env.reset()
        judgement = env.judge(modify_items_call(payment_method=PAYPAL))
        assert judgement.error_mode == "violate_constraint"
        assert judgement.expected.call_key() == modify_items_call().call_key()

    def test_modify_fixture_has_decision_turn_four(self, retail_modify_fixture):
        assert list(retail_modify_fixture.perturbations) == [4]
        assert retail_modify_fixture.intended_actions[2].tool_name == "get_product_details"

    def test_fixture_needs_retail_environment_id(self, retail_fixture):
        data = retail_fixture.model_dump(mode="json")
        data["task"]["environment_id"] = "travel-22"
        with pytest.raises(ValueError):
            retail_env.RetailFixture.model_validate(data)


class TestGenerator:
    def test_generated_tasks_pass_post_conditions(self, generated_retail):
        for fixture in generated_retail:
            assert validate_fixture(fixture) == [], fixture.task.task_id

    def test_generation_is_seeded(self, generated_retail):
        again = retail_env.generate_tasks(3, seed=3)
        assert [f.model_dump_json() for f in again] == [f.model_dump_json() for f in generated_retail[:3]]
        other = retail_env.generate_tasks(3, seed=4)
        assert [f.model_dump_json() for f in other] != [f.model_dump_json() for f in again]

    def test_task_ids(self, generated_retail):
        assert generated_retail[0].task.task_id == "retail-3-000"
        assert len({f.task.task_id for f in generated_retail}) == len(generated_retail)

    def test_every_task_has_a_violation_to_catch(self, generated_retail):
        for fixture in generated_retail:
            assert all("violate_constraint" in table for table in fixture.perturbations.values())
