import pytest
from loguru import logger

from lib import retail_env, travel_env
from lib.models import ActionProposal
from lib.suites import Suite


USER_ID = "yusuf_rossi_9620"
CARD = "credit_card_1111"
PAYPAL = "paypal_2222"


def make_retail_state():
    catalog = {
        "desk_lamp": retail_env.Product(product_id="desk_lamp", name="Desk Lamp", variants={
            "desk_lamp-white": retail_env.Variant(variant_id="desk_lamp-white", product_id="desk_lamp",
                                                  description="white", price=150.01, available=True),
            "desk_lamp-black": retail_env.Variant(variant_id="desk_lamp-black", product_id="desk_lamp",
                                                  description="black", price=135.24, available=True),
            "desk_lamp-brass": retail_env.Variant(variant_id="desk_lamp-brass", product_id="desk_lamp",
                                                  description="brass", price=162.40, available=False),
        }),
        "water_bottle": retail_env.Product(product_id="water_bottle", name="Water Bottle", variants={
            "water_bottle-500ml": retail_env.Variant(variant_id="water_bottle-500ml", product_id="water_bottle",
                                                     description="500ml", price=24.99, available=True),
            "water_bottle-1l": retail_env.Variant(variant_id="water_bottle-1l", product_id="water_bottle",
                                                  description="1l", price=34.50, available=True),
        }),
    }
    user = retail_env.User(
        user_id=USER_ID, name="Yusuf Rossi",
        payment_methods=(
            retail_env.PaymentMethod(payment_method_id=CARD, kind="credit_card"),
            retail_env.PaymentMethod(payment_method_id=PAYPAL, kind="paypal"),
        ),
    )
    orders = {
        "W1001": retail_env.Order(
            order_id="W1001", user_id=USER_ID, status="pending", payment_method=CARD,
            items=(
                retail_env.Item(item_id="W1001-1", product_id="desk_lamp", variant_id="desk_lamp-white", price=150.01),
                retail_env.Item(item_id="W1001-2", product_id="water_bottle", variant_id="water_bottle-500ml", price=24.99),
            ),
        ),
        "W1002": retail_env.Order(
            order_id="W1002", user_id=USER_ID, status="shipped", payment_method=PAYPAL,
            items=(
                retail_env.Item(item_id="W1002-1", product_id="desk_lamp", variant_id="desk_lamp-black", price=135.24),
            ),
        ),
    }
    return retail_env.RetailState(orders=orders, users={USER_ID: user}, catalog=catalog)


def cancel_call(reason="no longer needed", payment_method=CARD, order_id="W1001"):
    return ActionProposal.tool_call(
        "cancel_order", {"order_id": order_id, "reason": reason, "payment_method": payment_method},
    )


def modify_items_call(new_variant_id="desk_lamp-black", payment_method=CARD, item_id="W1001-1"):
    return ActionProposal.tool_call("modify_items", {
        "order_id": "W1001", "item_id": item_id, "new_variant_id": new_variant_id, "payment_method": payment_method,
    })


def make_price_preference(aspect, budget):
    return travel_env.Preference(
        attribute="price", comparator="<=", threshold=budget, reveal_trigger=travel_env.PRICE_TRIGGERS,
        template=f"My budget for the {aspect} is at most {budget:.2f} dollars.",
    )


def make_travel_parts():
    flight = travel_env.AspectOptions(aspect="flight", options=(
        travel_env.TravelOption(option_id="FL01", price=300.0, attributes={"stops": 0}),
        travel_env.TravelOption(option_id="FL02", price=250.0, attributes={"stops": 2}),
        travel_env.TravelOption(option_id="FL03", price=320.0, attributes={"stops": 1}),
        travel_env.TravelOption(option_id="FL04", price=300.0, attributes={"stops": 1}),
    ))
    apartment = travel_env.AspectOptions(aspect="apartment", options=(
        travel_env.TravelOption(option_id="AP01", price=120.0, attributes={"bedrooms": 2}),
        travel_env.TravelOption(option_id="AP02", price=90.0, attributes={"bedrooms": 1}),
        travel_env.TravelOption(option_id="AP03", price=150.0, attributes={"bedrooms": 3}),
        travel_env.TravelOption(option_id="AP04", price=200.0, attributes={"bedrooms": 2}),
    ))
    preferences = {
        "flight": (
            make_price_preference("flight", 350.0),
            travel_env.Preference(attribute="stops", comparator="<=", threshold=1,
                                  reveal_trigger=("stops", "layover", "nonstop"),
                                  template="For the flight, I need the number of stops of at most 1."),
        ),
        "apartment": (
            make_price_preference("apartment", 180.0),
            travel_env.Preference(attribute="bedrooms", comparator=">=", threshold=2,
                                  reveal_trigger=("bedrooms", "rooms"),
                                  template="For the apartment, I need a number of bedrooms of at least 2."),
        ),
    }
    return (flight, apartment), preferences


@pytest.fixture(autouse=True)
def quiet_logs():
    logger.remove()
    yield


@pytest.fixture
def retail_state():
    return make_retail_state()


@pytest.fixture
def retail_fixture():
    """Cancel W1001: lookups at turns 1-2, the cancellation at turn 3, closing message at turn 4."""
    return retail_env.compose_task("retail-cancel", make_retail_state(), [cancel_call()])


@pytest.fixture
def retail_modify_fixture():
    return retail_env.compose_task("retail-modify", make_retail_state(), [modify_items_call()])


@pytest.fixture
def travel_fixture():
    """Flight then apartment, recommendations at turns 4 and 8."""
    aspects, preferences = make_travel_parts()
    return travel_env.compose_task("travel-demo", 2, aspects, preferences)


@pytest.fixture
def retail_suite(retail_fixture, retail_modify_fixture):
    return Suite([retail_fixture, retail_modify_fixture])


@pytest.fixture(scope="session")
def generated_retail():
    return retail_env.generate_tasks(20, seed=3)


@pytest.fixture(scope="session")
def generated_travel():
    return [fixture for difficulty in travel_env.DIFFICULTIES
            for fixture in travel_env.generate_tasks(5, difficulty, seed=3)]
