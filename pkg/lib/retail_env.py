"""Miniature customer-service environment: orders, policies, scripted user and state-match reward."""
import random
from typing import Any, Literal, Optional

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from lib.errors import ToolArgumentError, UnknownToolError
from lib.models import (
    ActionProposal,
    CriticContext,
    FrozenModel,
    Judgement,
    Observation,
    RewardValue,
    StepOutcome,
    TaskFixture,
    TaskSpec,
)

# --- Configuration ---
ENVIRONMENT_KIND = "retail"
ENVIRONMENT_ID = "retail"
READ_ONLY_TOOLS = ("get_user_details", "get_order_details", "get_product_details")
STATE_MUTATING_TOOLS = ("cancel_order", "modify_items", "modify_payment")
CANCEL_REASONS = ("no longer needed", "ordered by mistake")
CLOSING_MESSAGE = "Your requests are complete. Is there anything else I can help you with?"
STOP_MESSAGE = "No, that's all. Thank you! ###STOP###"
RESTATE_PREFIX = "That is not done yet. Here is what I still need:"
CLOSING_CUES = ("anything else", "goodbye")
FOREIGN_PAYMENT_METHOD = "gift_card_0000000"

OrderStatus = Literal["pending", "shipped", "cancelled", "modified"]


# --- State ---

class PaymentMethod(FrozenModel):
    payment_method_id: str
    kind: Literal["credit_card", "gift_card", "paypal"]


class User(FrozenModel):
    user_id: str
    name: str
    payment_methods: tuple[PaymentMethod, ...]
    membership: Literal["regular", "gold"] = "regular"

    @property
    def payment_method_ids(self):
        return [method.payment_method_id for method in self.payment_methods]


class Variant(FrozenModel):
    variant_id: str
    product_id: str
    description: str
    price: float = Field(gt=0)
    available: bool


class Product(FrozenModel):
    product_id: str
    name: str
    variants: dict[str, Variant]


class Item(FrozenModel):
    item_id: str
    product_id: str
    variant_id: str
    price: float = Field(gt=0)


class Settlement(FrozenModel):
    payment_method: str
    amount: float


class Order(FrozenModel):
    order_id: str
    user_id: str
    items: tuple[Item, ...]
    status: OrderStatus
    payment_method: str
    cancel_reason: Optional[str] = None
    refund: Optional[Settlement] = None
    settlement: Optional[Settlement] = None


class RetailState(FrozenModel):
    orders: dict[str, Order]
    users: dict[str, User]
    catalog: dict[str, Product]

    @model_validator(mode="after")
    def _references_resolve(self):
        for product_id, product in self.catalog.items():
            for variant_id, variant in product.variants.items():
                if variant.variant_id != variant_id or variant.product_id != product_id:
                    raise ValueError(f"variant {variant_id} is filed under the wrong key")
        for order_id, order in self.orders.items():
            if order.order_id != order_id:
                raise ValueError(f"order {order_id} is filed under the wrong key")
            user = self.users.get(order.user_id)
            if user is None:
                raise ValueError(f"order {order_id} references unknown user {order.user_id}")
            if order.payment_method not in user.payment_method_ids:
                raise ValueError(f"order {order_id} uses a payment method its user does not own")
            for item in order.items:
                product = self.catalog.get(item.product_id)
                if product is None or item.variant_id not in product.variants:
                    raise ValueError(f"order {order_id} references unknown variant {item.variant_id}")
        return self

    def find_variant(self, variant_id):
        for product in self.catalog.values():
            if variant_id in product.variants:
                return product.variants[variant_id]
        return None


# --- Policies ---

class Condition(FrozenModel):
    """A comparison between two operands; strings starting with '$' are context references."""

    op: Literal["eq", "ne", "in", "not_in"]
    left: str
    right: Any


class PolicyRule(FrozenModel):
    rule_id: str
    tools: tuple[str, ...]
    require: Condition
    message: str


DEFAULT_POLICIES = (
    PolicyRule(rule_id="P1", tools=("modify_items",),
               require=Condition(op="eq", left="$order.status", right="pending"),
               message="Items can only be modified on pending orders."),
    PolicyRule(rule_id="P2", tools=("modify_items",),
               require=Condition(op="eq", left="$variant.available", right=True),
               message="The new item variant must be available."),
    PolicyRule(rule_id="P3", tools=("cancel_order",),
               require=Condition(op="eq", left="$order.status", right="pending"),
               message="Only pending orders can be cancelled."),
    PolicyRule(rule_id="P4", tools=("cancel_order",),
               require=Condition(op="in", left="$args.reason", right=list(CANCEL_REASONS)),
               message="The cancellation reason must be 'no longer needed' or 'ordered by mistake'."),
    PolicyRule(rule_id="P5", tools=("cancel_order", "modify_items"),
               require=Condition(op="eq", left="$args.payment_method", right="$order.payment_method"),
               message="Refunds and price differences must use the order's original payment method."),
    PolicyRule(rule_id="P6", tools=("modify_items",),
               require=Condition(op="eq", left="$variant.product_id", right="$item.product_id"),
               message="An item can only be exchanged for a variant of the same product."),
    PolicyRule(rule_id="P7", tools=("modify_payment",),
               require=Condition(op="in", left="$args.payment_method", right="$user.payment_method_ids"),
               message="The new payment method must belong to the order's user."),
    PolicyRule(rule_id="P8", tools=("modify_payment",),
               require=Condition(op="eq", left="$order.status", right="pending"),
               message="The payment method can only be changed on pending orders."),
    PolicyRule(rule_id="P9", tools=("modify_payment",),
               require=Condition(op="ne", left="$args.payment_method", right="$order.payment_method"),
               message="The new payment method must differ from the current one."),
    PolicyRule(rule_id="P10", tools=STATE_MUTATING_TOOLS,
               require=Condition(op="eq", left="$call", right="$request"),
               message="Only make the change the user requested for the order, with the details the user gave."),
)

CONTEXT_ROOTS = ("args", "order", "user", "item", "variant", "call", "request")
# Roots only present when the user's requests are known; rules reading them are skipped otherwise.
REQUEST_ROOTS = ("request",)


def _operand_roots(condition):
    return [
        operand[1:].split(".")[0] for operand in (condition.left, condition.right)
        if isinstance(operand, str) and operand.startswith("$")
    ]


def validate_policies(policies):
    """Checks that a policy set is internally consistent; returns the problems found."""
    problems = []
    seen = set()
    for rule in policies:
        if rule.rule_id in seen:
            problems.append(f"duplicate rule id {rule.rule_id}")
        seen.add(rule.rule_id)
        for tool in rule.tools:
            if tool not in STATE_MUTATING_TOOLS:
                problems.append(f"{rule.rule_id} constrains non-mutating or unknown tool {tool}")
        for operand in (rule.require.left, rule.require.right):
            if isinstance(operand, str) and operand.startswith("$"):
                if operand[1:].split(".")[0] not in CONTEXT_ROOTS:
                    problems.append(f"{rule.rule_id} references unknown operand {operand}")
    return problems


def render_policies(policies):
    return "\n".join(
        f"{rule.rule_id} ({', '.join(rule.tools)}): {rule.message}" for rule in policies
    )


def _call_record(call):
    return {"tool_name": call.tool_name, "args": dict(call.tool_args)}


def _policy_context(state, call, requests=None):
    args = dict(call.tool_args)
    order = state.orders.get(args.get("order_id"))
    user = state.users.get(order.user_id) if order else None
    item = None
    if order is not None:
        item = next((i for i in order.items if i.item_id == args.get("item_id")), None)
    variant = state.find_variant(args.get("new_variant_id"))
    user_context = None
    if user is not None:
        user_context = {**user.model_dump(mode="json"), "payment_method_ids": user.payment_method_ids}
    context = {
        "args": args,
        "order": order.model_dump(mode="json") if order else None,
        "user": user_context,
        "item": item.model_dump(mode="json") if item else None,
        "variant": variant.model_dump(mode="json") if variant else None,
        "call": _call_record(call),
    }
    if requests is not None:
        requested = next((c for c in requests if c.tool_args.get("order_id") == args.get("order_id")), None)
        context["request"] = _call_record(requested) if requested is not None else None
    return context


def reads_request(rule):
    """True when a rule compares against the user's request rather than the store state."""
    return any(root in REQUEST_ROOTS for root in _operand_roots(rule.require))


def _resolve(operand, context):
    if not isinstance(operand, str) or not operand.startswith("$"):
        return operand
    value = context
    for part in operand[1:].split("."):
        if not isinstance(value, dict):
            return None
        value = value.get(part)
    return value


def _holds(condition, context):
    left = _resolve(condition.left, context)
    right = _resolve(condition.right, context)
    if condition.op == "eq":
        return left == right
    if condition.op == "ne":
        return left != right
    contained = isinstance(right, (list, tuple)) and left in right
    return contained if condition.op == "in" else not contained


# --- Tools ---

class ToolArgs(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", strict=True)


class UserLookupArgs(ToolArgs):
    user_id: str = Field(min_length=1)


class OrderLookupArgs(ToolArgs):
    order_id: str = Field(min_length=1)


class ProductLookupArgs(ToolArgs):
    product_id: str = Field(min_length=1)


class CancelOrderArgs(ToolArgs):
    order_id: str = Field(min_length=1)
    reason: str
    payment_method: str


class ModifyItemsArgs(ToolArgs):
    order_id: str = Field(min_length=1)
    item_id: str
    new_variant_id: str
    payment_method: str


class ModifyPaymentArgs(ToolArgs):
    order_id: str = Field(min_length=1)
    payment_method: str


TOOL_ARGS = {
    "get_user_details": UserLookupArgs,
    "get_order_details": OrderLookupArgs,
    "get_product_details": ProductLookupArgs,
    "cancel_order": CancelOrderArgs,
    "modify_items": ModifyItemsArgs,
    "modify_payment": ModifyPaymentArgs,
}


def validate_call(call):
    """Parses the arguments of a tool call into its argument model."""
    model = TOOL_ARGS.get(call.tool_name)
    if model is None:
        raise UnknownToolError(call.tool_name, ENVIRONMENT_KIND)
    try:
        return model.model_validate(call.tool_args or {})
    except ValidationError as exc:
        error = exc.errors()[0]
        argument = ".".join(str(part) for part in error["loc"]) or "<args>"
        raise ToolArgumentError(call.tool_name, argument, error["msg"]) from exc


def check_policies(state, call, policies=DEFAULT_POLICIES, requests=None):
    """Returns every violated rule, in policy order.

    `requests` are the calls the user asked for. Without them, rules that
    compare against the user's request are not checked.
    """
    if call.kind != "tool_call":
        return []
    validate_call(call)
    context = _policy_context(state, call, requests)
    return [
        rule for rule in policies
        if call.tool_name in rule.tools
        and (requests is not None or not reads_request(rule))
        and not _holds(rule.require, context)
    ]


def _error(message):
    return {"error": message}


def _pending_order(state, order_id, verb):
    order = state.orders.get(order_id)
    if order is None:
        return None, _error(f"order {order_id} not found")
    if order.status != "pending":
        return None, _error(f"cannot {verb} {order.status} order")
    return order, None


def _with_order(state, order):
    return state.model_copy(update={"orders": {**state.orders, order.order_id: order}})


def _get_user_details(state, args):
    user = state.users.get(args.user_id)
    if user is None:
        return state, _error(f"user {args.user_id} not found")
    orders = sorted(o.order_id for o in state.orders.values() if o.user_id == user.user_id)
    return state, {**user.model_dump(mode="json"), "orders": orders}


def _get_order_details(state, args):
    order = state.orders.get(args.order_id)
    if order is None:
        return state, _error(f"order {args.order_id} not found")
    return state, order.model_dump(mode="json")


def _get_product_details(state, args):
    product = state.catalog.get(args.product_id)
    if product is None:
        return state, _error(f"product {args.product_id} not found")
    return state, product.model_dump(mode="json")


def _cancel_order(state, args):
    order, error = _pending_order(state, args.order_id, "cancel")
    if error:
        return state, error
    if args.payment_method not in state.users[order.user_id].payment_method_ids:
        return state, _error(f"payment method {args.payment_method} not found")
    total = round(sum(item.price for item in order.items), 2)
    cancelled = order.model_copy(update={
        "status": "cancelled",
        "cancel_reason": args.reason,
        "refund": Settlement(payment_method=args.payment_method, amount=total),
    })
    return _with_order(state, cancelled), cancelled.model_dump(mode="json")


def _modify_items(state, args):
    order, error = _pending_order(state, args.order_id, "modify")
    if error:
        return state, error
    position = next((n for n, item in enumerate(order.items) if item.item_id == args.item_id), None)
    if position is None:
        return state, _error(f"item {args.item_id} not found in order {order.order_id}")
    item = order.items[position]
    variant = state.find_variant(args.new_variant_id)
    if variant is None:
        return state, _error(f"variant {args.new_variant_id} not found")
    if variant.product_id != item.product_id:
        return state, _error(f"variant {variant.variant_id} is not a variant of {item.product_id}")
    if variant.variant_id == item.variant_id:
        return state, _error(f"item {item.item_id} already has variant {variant.variant_id}")
    if not variant.available:
        return state, _error(f"variant {variant.variant_id} is not available")
    if args.payment_method not in state.users[order.user_id].payment_method_ids:
        return state, _error(f"payment method {args.payment_method} not found")
    new_item = item.model_copy(update={"variant_id": variant.variant_id, "price": variant.price})
    items = order.items[:position] + (new_item,) + order.items[position + 1:]
    modified = order.model_copy(update={
        "items": items,
        "status": "modified",
        "settlement": Settlement(payment_method=args.payment_method, amount=round(item.price - variant.price, 2)),
    })
    return _with_order(state, modified), modified.model_dump(mode="json")


def _modify_payment(state, args):
    order, error = _pending_order(state, args.order_id, "modify")
    if error:
        return state, error
    if args.payment_method not in state.users[order.user_id].payment_method_ids:
        return state, _error(f"payment method {args.payment_method} not found")
    if args.payment_method == order.payment_method:
        return state, _error(f"order {order.order_id} already uses {args.payment_method}")
    modified = order.model_copy(update={"payment_method": args.payment_method, "status": "modified"})
    return _with_order(state, modified), modified.model_dump(mode="json")


TOOL_HANDLERS = {
    "get_user_details": _get_user_details,
    "get_order_details": _get_order_details,
    "get_product_details": _get_product_details,
    "cancel_order": _cancel_order,
    "modify_items": _modify_items,
    "modify_payment": _modify_payment,
}


def execute_tool(state, call, turn_index=0):
    """Runs one tool call and returns (new state, tool observation).

    Domain failures come back as {"error": ...} results with the state unchanged.
    """
    args = validate_call(call)
    new_state, result = TOOL_HANDLERS[call.tool_name](state, args)
    return new_state, Observation.from_tool(turn_index, result)


# --- Reward ---

class RetailGroundTruth(FrozenModel):
    """Expected values at canonical state paths, plus the reference calls of the reward-1 path."""

    expected: dict[str, Any]
    reference_calls: tuple[ActionProposal, ...] = ()


_MISSING = object()


def resolve_path(document, path):
    value = document
    for part in path.split("."):
        if value is None:
            return None
        if isinstance(value, list):
            if not part.isdigit() or int(part) >= len(value):
                return _MISSING
            value = value[int(part)]
        elif isinstance(value, dict):
            if part not in value:
                return _MISSING
            value = value[part]
        else:
            return _MISSING
    return value


def canonical_paths(state):
    """Values of every mutable field of every order, keyed by canonical path."""
    expected = {}
    for order_id, order in sorted(state.orders.items()):
        base = f"orders.{order_id}"
        expected[f"{base}.status"] = order.status
        expected[f"{base}.payment_method"] = order.payment_method
        expected[f"{base}.cancel_reason"] = order.cancel_reason
        expected[f"{base}.refund.payment_method"] = order.refund.payment_method if order.refund else None
        expected[f"{base}.settlement.payment_method"] = (
            order.settlement.payment_method if order.settlement else None
        )
        for index, item in enumerate(order.items):
            expected[f"{base}.items.{index}.variant_id"] = item.variant_id
    return expected


def reward(final_state, gt):
    """1 when every constrained path matches; the breakdown scores each path."""
    document = final_state.model_dump(mode="json")
    breakdown = {
        path: 1.0 if resolve_path(document, path) == gt.expected[path] else 0.0
        for path in sorted(gt.expected)
    }
    if not breakdown:
        return RewardValue(value=1.0, breakdown={"state": 1.0})
    value = 1.0 if all(score == 1.0 for score in breakdown.values()) else 0.0
    return RewardValue(value=value, breakdown=breakdown)


def mismatched_paths(reward_value):
    return [path for path, score in reward_value.breakdown.items() if score < 1.0]


# --- Environment ---

def is_closing(message):
    text = (message or "").lower()
    return any(cue in text for cue in CLOSING_CUES)


class RetailFixture(TaskFixture):
    state: RetailState
    policies: tuple[PolicyRule, ...] = DEFAULT_POLICIES

    @model_validator(mode="after")
    def _retail_task(self):
        if self.task.environment_id != ENVIRONMENT_ID:
            raise ValueError(f"retail fixtures need environment_id '{ENVIRONMENT_ID}'")
        return self

    @property
    def ground_truth(self):
        return RetailGroundTruth.model_validate(self.task.success_criterion)


class RetailEnvironment:
    """One episode's worth of retail state driven by a scripted user."""

    kind = ENVIRONMENT_KIND

    def __init__(self, fixture):
        self.fixture = fixture
        self.task = fixture.task
        self.policies = fixture.policies
        self.ground_truth = fixture.ground_truth
        self.reset()

    def reset(self):
        self.state = self.fixture.state
        self.executed_calls = []
        self.done = False
        return Observation(turn_index=1, source="user", content=self.fixture.user_script[0])

    def copy(self):
        clone = object.__new__(RetailEnvironment)
        clone.__dict__.update(self.__dict__)
        clone.executed_calls = list(self.executed_calls)
        return clone

    def user_reply(self, message):
        """The scripted user's answer to an agent message, and whether the user leaves.

        The user restates what is still outstanding and leaves once the agent
        closes the conversation or nothing is left to do.
        """
        outstanding = self.outstanding_requests()
        if outstanding and not is_closing(message):
            sentences = " ".join(_request_sentence(self.fixture.state, call) for call in outstanding)
            return f"{RESTATE_PREFIX} {sentences} Please go ahead.", False
        return STOP_MESSAGE, True

    def step(self, action, turn_index):
        next_turn = turn_index + 1
        if action.kind == "message":
            content, self.done = self.user_reply(action.text)
            return StepOutcome(observation=Observation(turn_index=next_turn, source="user", content=content), done=self.done)
        if action.kind == "recommendation":
            observation = Observation(
                turn_index=next_turn, source="system",
                content="error: recommendations are not available in this environment",
            )
            return StepOutcome(observation=observation, done=False)
        try:
            new_state, observation = execute_tool(self.state, action, next_turn)
        except (UnknownToolError, ToolArgumentError) as exc:
            return StepOutcome(observation=Observation.from_tool(next_turn, _error(str(exc))), done=False)
        if "error" not in observation.tool_result and action.tool_name in STATE_MUTATING_TOOLS:
            self.executed_calls.append(action.call_key())
        self.state = new_state
        return StepOutcome(observation=observation, done=False)

    def evaluate(self):
        return reward(self.state, self.ground_truth)

    def critic_context(self, proposal):
        return CriticContext(text=render_policies(self.policies))

    def actor_context(self):
        return render_policies(self.policies)

    def pending_reference_calls(self):
        return [c for c in self.ground_truth.reference_calls if c.call_key() not in self.executed_calls]

    def outstanding_requests(self):
        """Requested changes not yet made whose order can still be changed."""
        return [
            call for call in self.pending_reference_calls()
            if self.state.orders[call.tool_args["order_id"]].status == "pending"
        ]

    def judge(self, proposal):
        """Ground-truth check of a proposal against the policies and the reference path."""
        if proposal.kind == "message":
            return self._judge_message()
        if proposal.kind != "tool_call" or proposal.tool_name not in STATE_MUTATING_TOOLS:
            return Judgement(consistent=True)
        pending = self.pending_reference_calls()
        order_id = (proposal.tool_args or {}).get("order_id")
        expected = next((c for c in pending if c.tool_args.get("order_id") == order_id), None)
        if expected is None and pending:
            expected = pending[0]
        try:
            violations = check_policies(self.state, proposal, self.policies, self.ground_truth.reference_calls)
        except (UnknownToolError, ToolArgumentError) as exc:
            return Judgement(consistent=False, error_mode="violate_constraint", details=str(exc), expected=expected)
        if violations and not all(reads_request(rule) for rule in violations):
            details = " ".join(f"{rule.rule_id}: {rule.message}" for rule in violations)
            return Judgement(consistent=False, error_mode="violate_constraint", details=details, expected=expected)
        if not violations and proposal.call_key() in [c.call_key() for c in pending]:
            return Judgement(consistent=True)
        return Judgement(
            consistent=False, error_mode="off_task",
            details="the call is allowed by policy but is not what the user asked for",
            expected=expected,
        )

    def _judge_message(self):
        outstanding = self.outstanding_requests()
        if not outstanding:
            return Judgement(consistent=True)
        order_id = outstanding[0].tool_args["order_id"]
        return Judgement(
            consistent=False, error_mode="hallucinate_constraint",
            details=f"order {order_id} can still be changed as the user asked, so carry out the request "
                    "instead of declining or ending the conversation.",
            expected=outstanding[0],
        )


# --- Task generation ---

PRODUCTS = {
    "action_camera": ("Action Camera", {"black": 481.50, "silver": 466.75, "4k-black": 512.30}),
    "patio_umbrella": ("Patio Umbrella", {"blue": 288.82, "green": 271.10, "red": 295.00}),
    "desk_lamp": ("Desk Lamp", {"white": 150.01, "black": 135.24, "brass": 162.40}),
    "t_shirt": ("T-Shirt", {"m-blue": 53.27, "l-blue": 54.10, "m-red": 46.66, "l-red": 49.99}),
    "backpack": ("Backpack", {"grey": 193.38, "black": 201.15, "green": 180.75}),
    "water_bottle": ("Water Bottle", {"500ml": 24.99, "750ml": 29.99, "1l": 34.50}),
}

USER_NAMES = (
    "Yusuf Rossi", "Mei Davis", "Aarav Anderson", "Sofia Kim",
    "Lucas Brown", "Noa Garcia", "Ivan Petrov", "Amara Okafor",
)

PAYMENT_KINDS = ("credit_card", "gift_card", "paypal")


def _generate_catalog(rng):
    catalog = {}
    for product_id, (name, variants) in PRODUCTS.items():
        catalog[product_id] = Product(
            product_id=product_id,
            name=name,
            variants={
                f"{product_id}-{option}": Variant(
                    variant_id=f"{product_id}-{option}", product_id=product_id,
                    description=option, price=price, available=rng.random() < 0.75,
                )
                for option, price in variants.items()
            },
        )
    return catalog


def _generate_user(rng):
    name = rng.choice(USER_NAMES)
    user_id = f"{name.lower().replace(' ', '_')}_{rng.randint(1000, 9999)}"
    kinds = rng.sample(PAYMENT_KINDS, rng.randint(2, 3))
    methods = tuple(
        PaymentMethod(payment_method_id=f"{kind}_{rng.randint(1000000, 9999999)}", kind=kind)
        for kind in kinds
    )
    return User(user_id=user_id, name=name, payment_methods=methods, membership=rng.choice(("regular", "gold")))


def _generate_orders(rng, user, catalog):
    orders = {}
    target = rng.randint(2, 3)
    while len(orders) < target:
        order_id = f"W{rng.randint(1000000, 9999999)}"
        if order_id in orders:
            continue
        items = []
        for position, product_id in enumerate(rng.sample(sorted(catalog), rng.randint(1, 3)), start=1):
            variant = catalog[product_id].variants[rng.choice(sorted(catalog[product_id].variants))]
            items.append(Item(item_id=f"{order_id}-{position}", product_id=product_id,
                              variant_id=variant.variant_id, price=variant.price))
        orders[order_id] = Order(
            order_id=order_id, user_id=user.user_id, items=tuple(items),
            status="pending" if not orders else rng.choice(("pending", "shipped")),
            payment_method=rng.choice(user.payment_method_ids),
        )
    return orders


def _alternative_variants(state, item, exclude=()):
    return [
        variant_id for variant_id, variant in sorted(state.catalog[item.product_id].variants.items())
        if variant.available and variant_id != item.variant_id and variant_id not in exclude
    ]


def _reference_call(rng, state, order):
    user = state.users[order.user_id]
    kinds = ["cancel_order", "modify_payment"]
    swappable = [item for item in order.items if _alternative_variants(state, item)]
    if swappable:
        kinds.append("modify_items")
    kind = rng.choice(kinds)
    if kind == "cancel_order":
        args = {"order_id": order.order_id, "reason": rng.choice(CANCEL_REASONS),
                "payment_method": order.payment_method}
        text = f"I will cancel order {order.order_id} now."
    elif kind == "modify_payment":
        others = [pm for pm in user.payment_method_ids if pm != order.payment_method]
        args = {"order_id": order.order_id, "payment_method": rng.choice(others)}
        text = f"I will switch the payment method of order {order.order_id}."
    else:
        item = rng.choice(swappable)
        args = {"order_id": order.order_id, "item_id": item.item_id,
                "new_variant_id": rng.choice(_alternative_variants(state, item)),
                "payment_method": order.payment_method}
        text = f"I will exchange item {item.item_id} in order {order.order_id}."
    return ActionProposal.tool_call(kind, args, text=text)


def _request_sentence(state, call):
    args = call.tool_args
    order_id = args["order_id"]
    if call.tool_name == "cancel_order":
        return (f"Cancel order {order_id} with the reason '{args['reason']}' and have the refund "
                "go back to the original payment method.")
    if call.tool_name == "modify_payment":
        return f"Change the payment method of order {order_id} to {args['payment_method']}."
    order = state.orders[order_id]
    item = next(i for i in order.items if i.item_id == args["item_id"])
    product = state.catalog[item.product_id]
    new_variant = product.variants[args["new_variant_id"]]
    return (f"In order {order_id}, exchange the {product.name} ({product.variants[item.variant_id].description}) "
            f"for the {new_variant.description} variant and settle any price difference with the "
            "original payment method.")


def _with_args(call, **changes):
    return ActionProposal.tool_call(call.tool_name, {**call.tool_args, **changes}, text=call.text)


def _perturbation_table(state, call):
    """Wrong versions of a reference call, one per error mode where one exists.

    Declining is a message rather than a call, so the user restates the request
    and the episode goes on without the change.
    """
    args = call.tool_args
    order = state.orders[args["order_id"]]
    user = state.users[order.user_id]
    other_methods = [pm for pm in user.payment_method_ids if pm != order.payment_method]
    cancel_instead = ActionProposal.tool_call(
        "cancel_order",
        {"order_id": order.order_id, "reason": CANCEL_REASONS[0], "payment_method": order.payment_method},
        text=f"This order cannot be changed, so I will cancel order {order.order_id} instead.",
    )
    # a refund to another of the user's methods, or an invalid reason when there is none
    wrong_refund = {"payment_method": other_methods[0]} if other_methods else {"reason": "other"}
    table = {}
    if call.tool_name == "cancel_order":
        table["violate_constraint"] = _with_args(call, **wrong_refund)
        table["suboptimal_choice"] = _with_args(
            call, reason=next(r for r in CANCEL_REASONS if r != args["reason"])
        )
    elif call.tool_name == "modify_items":
        table["violate_constraint"] = _with_args(
            call, payment_method=other_methods[0] if other_methods else FOREIGN_PAYMENT_METHOD
        )
        table["hallucinate_constraint"] = cancel_instead
        item = next(i for i in order.items if i.item_id == args["item_id"])
        alternatives = _alternative_variants(state, item, exclude=(args["new_variant_id"],))
        if alternatives:
            table["suboptimal_choice"] = _with_args(call, new_variant_id=alternatives[0])
    else:
        table["violate_constraint"] = _with_args(call, payment_method=FOREIGN_PAYMENT_METHOD)
        table["hallucinate_constraint"] = cancel_instead
        others = [pm for pm in other_methods if pm != args["payment_method"]]
        if others:
            table["suboptimal_choice"] = _with_args(call, payment_method=others[0])
    table["decline_request"] = ActionProposal.message(
        f"I'm sorry, but order {order.order_id} can no longer be changed."
    )
    return table


def compose_task(task_id, state, reference_calls, policies=DEFAULT_POLICIES):
    """Builds a complete fixture for the user owning the referenced orders.

    The scripted path looks the user up, then looks up each order (and the
    product for item exchanges) before making each reference call, then closes.
    """
    user_id = state.orders[reference_calls[0].tool_args["order_id"]].user_id
    user = state.users[user_id]
    intended = [ActionProposal.tool_call("get_user_details", {"user_id": user_id})]
    perturbations = {}
    final_state = state
    for call in reference_calls:
        order_id = call.tool_args["order_id"]
        intended.append(ActionProposal.tool_call("get_order_details", {"order_id": order_id}))
        if call.tool_name == "modify_items":
            item = next(i for i in state.orders[order_id].items if i.item_id == call.tool_args["item_id"])
            intended.append(ActionProposal.tool_call("get_product_details", {"product_id": item.product_id}))
        intended.append(call)
        perturbations[len(intended)] = _perturbation_table(state, call)
        final_state, observation = execute_tool(final_state, call)
        if "error" in observation.tool_result:
            raise ValueError(f"reference call for {task_id} fails: {observation.tool_result['error']}")
    intended.append(ActionProposal.message(CLOSING_MESSAGE))

    requests = " ".join(_request_sentence(state, call) for call in reference_calls)
    instruction = (f"You are {user.name} (user id {user_id}). {requests} "
                   "When everything is done, say that you need nothing else.")
    gt = RetailGroundTruth(expected=canonical_paths(final_state), reference_calls=tuple(reference_calls))
    task = TaskSpec(
        task_id=task_id, environment_id=ENVIRONMENT_ID, instruction=instruction,
        user_script_id=task_id, success_criterion=gt.model_dump(mode="json"),
        horizon=len(intended) + 2,
    )
    return RetailFixture(
        task=task, user_script=(instruction,), intended_actions=tuple(intended),
        perturbations=perturbations, state=state, policies=policies,
    )


def generate_tasks(n, seed):
    """Seeded generator of n retail fixtures."""
    fixtures = []
    for index in range(n):
        rng = random.Random(f"retail:{seed}:{index}")
        catalog = _generate_catalog(rng)
        user = _generate_user(rng)
        state = RetailState(orders=_generate_orders(rng, user, catalog), users={user.user_id: user}, catalog=catalog)
        pending = [order for order in state.orders.values() if order.status == "pending"]
        chosen = rng.sample(pending, min(len(pending), rng.choice((1, 2))))
        calls = [_reference_call(rng, state, order) for order in chosen]
        fixtures.append(compose_task(f"retail-{seed}-{index:03d}", state, calls))
    logger.info("generated {} retail tasks (seed {})", n, seed)
    return fixtures
