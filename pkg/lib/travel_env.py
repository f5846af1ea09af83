"""Miniature preference-elicitation environment for travel planning.

Each task covers a few travel aspects (flight, apartment, ...). The user holds
hidden preferences per aspect that are revealed when the agent's question
mentions one of their trigger keywords. The agent recommends exactly one option
per aspect; each recommendation scores 1 when it satisfies every preference at
the lowest feasible price, 0.8 when it satisfies them at a higher price, and 0
otherwise.
"""
import random
import re
from fractions import Fraction
from typing import Literal, Optional, Union

from loguru import logger
from pydantic import Field, model_validator

from lib.errors import UnknownAspectError
from lib.models import (
    ActionProposal,
    CriticContext,
    FrozenModel,
    Judgement,
    Observation,
    RewardValue,
    Scalar,
    StepOutcome,
    TaskFixture,
    TaskSpec,
)

# --- Configuration ---
ENVIRONMENT_KIND = "travel"
READ_ONLY_TOOLS = ("search_options",)
STATE_MUTATING_TOOLS = ()
DIFFICULTIES = (2, 3, 4)
ASPECTS_PER_TASK = 2
MAX_OPTIONS = 20
OPTIMAL_SCORE = 1.0
PRICIER_SCORE = 0.8
NEUTRAL_REPLY = "I don't have a strong opinion about that. Is there anything else you would like to know?"
PRICE_TRIGGERS = ("budget", "cost", "price")

Comparator = Literal[">=", "<=", "=", "in"]
KEYWORD_PATTERN = re.compile(r"[a-z_]+")


def environment_id_for(difficulty):
    return f"travel-{difficulty}{difficulty}"


# --- Options and preferences ---

class TravelOption(FrozenModel):
    option_id: str
    price: float = Field(gt=0)
    attributes: dict[str, Scalar]


class AspectOptions(FrozenModel):
    aspect: str
    options: tuple[TravelOption, ...]

    @model_validator(mode="after")
    def _unique_ids(self):
        ids = [option.option_id for option in self.options]
        if len(ids) != len(set(ids)):
            raise ValueError(f"option ids for {self.aspect} are not unique")
        return self

    def get(self, option_id):
        for option in self.options:
            if option.option_id == option_id:
                return option
        raise UnknownAspectError(f"unknown option '{option_id}' for aspect '{self.aspect}'")


class Preference(FrozenModel):
    attribute: str
    comparator: Comparator
    threshold: Union[tuple[Scalar, ...], Scalar]
    revealed: bool = False
    reveal_trigger: tuple[str, ...]
    template: str

    @model_validator(mode="after")
    def _revealable(self):
        if not self.revealed and not self.reveal_trigger:
            raise ValueError(f"unrevealed preference on {self.attribute} has no trigger keywords")
        if (self.comparator == "in") != isinstance(self.threshold, tuple):
            raise ValueError("'in' preferences take a set of values, the others a single threshold")
        return self


class PreferenceSet(FrozenModel):
    preferences: dict[str, tuple[Preference, ...]]


class RecommendationLedger(FrozenModel):
    recommendations: dict[str, Optional[str]]

    @classmethod
    def empty(cls, aspects):
        return cls(recommendations={aspect: None for aspect in aspects})

    @property
    def complete(self):
        return all(option_id is not None for option_id in self.recommendations.values())


def satisfies(option, preference):
    value = option.price if preference.attribute == "price" else option.attributes.get(preference.attribute)
    if value is None:
        return False
    threshold = preference.threshold
    if preference.comparator == ">=":
        return value >= threshold
    if preference.comparator == "<=":
        return value <= threshold
    if preference.comparator == "=":
        return value == threshold
    return value in threshold


def satisfying_options(preferences, options):
    return [option for option in options.options if all(satisfies(option, p) for p in preferences)]


def optimal_option_ids(preferences, options):
    """Ids of every satisfying option at the minimal price (ties included)."""
    feasible = satisfying_options(preferences, options)
    if not feasible:
        return ()
    cheapest = min(option.price for option in feasible)
    return tuple(option.option_id for option in feasible if option.price == cheapest)


# --- Operations ---

def user_reply(prefs, question):
    """Answers a question, revealing every preference whose trigger it mentions."""
    keywords = set(KEYWORD_PATTERN.findall(question.lower()))
    lines = []
    updated = {}
    for aspect, preferences in prefs.preferences.items():
        revised = []
        for preference in preferences:
            if keywords & set(preference.reveal_trigger):
                lines.append(preference.template)
                if not preference.revealed:
                    preference = preference.model_copy(update={"revealed": True})
            revised.append(preference)
        updated[aspect] = tuple(revised)
    if not lines:
        return NEUTRAL_REPLY, prefs
    return " ".join(lines), PreferenceSet(preferences=updated)


def aspect_reward(aspect, chosen, prefs, options):
    if aspect not in prefs.preferences or options.aspect != aspect:
        raise UnknownAspectError(f"unknown aspect '{aspect}'")
    preferences = prefs.preferences[aspect]
    option = options.get(chosen)
    if not all(satisfies(option, p) for p in preferences):
        return 0.0
    return OPTIMAL_SCORE if chosen in optimal_option_ids(preferences, options) else PRICIER_SCORE


def record_recommendation(ledger, aspect, option_id):
    """Returns (ledger', rejection); a rejection leaves the ledger unchanged."""
    if aspect not in ledger.recommendations:
        raise UnknownAspectError(f"unknown aspect '{aspect}'")
    existing = ledger.recommendations[aspect]
    if existing is not None:
        return ledger, (f"a recommendation for {aspect} was already made ({existing}); "
                        "recommendations cannot be changed")
    return ledger.model_copy(update={"recommendations": {**ledger.recommendations, aspect: option_id}}), None


def task_score(ledger, prefs, aspects):
    """Mean of the aspect components; aspects without a recommendation score 0."""
    breakdown = {}
    for options in aspects:
        chosen = ledger.recommendations.get(options.aspect)
        breakdown[options.aspect] = 0.0 if chosen is None else aspect_reward(options.aspect, chosen, prefs, options)
    mean = sum(Fraction(str(v)) for v in breakdown.values()) / len(breakdown)
    return RewardValue(value=float(mean), breakdown=breakdown)


def render_options(options):
    lines = []
    for option in options.options:
        attributes = ", ".join(f"{name}={_format_value(value)}" for name, value in sorted(option.attributes.items()))
        lines.append(f"{option.option_id}: price {option.price:.2f}; {attributes}")
    return "\n".join(lines)


def _format_value(value):
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value)


# --- Environment ---

class TravelGroundTruth(FrozenModel):
    aspects: tuple[str, ...]
    optimal_options: dict[str, tuple[str, ...]]

    @model_validator(mode="after")
    def _covers_aspects(self):
        if set(self.optimal_options) != set(self.aspects):
            raise ValueError("optimal_options must list every aspect")
        return self


class TravelFixture(TaskFixture):
    difficulty: int
    aspects: tuple[AspectOptions, ...]
    preferences: PreferenceSet

    @model_validator(mode="after")
    def _travel_task(self):
        if self.task.environment_id != environment_id_for(self.difficulty):
            raise ValueError(f"difficulty {self.difficulty} fixtures need environment_id {environment_id_for(self.difficulty)}")
        names = [options.aspect for options in self.aspects]
        if set(names) != set(self.preferences.preferences) or len(names) != len(set(names)):
            raise ValueError("preferences must cover exactly the task's aspects")
        for options in self.aspects:
            if len(options.options) > MAX_OPTIONS:
                raise ValueError(f"{options.aspect} has more than {MAX_OPTIONS} options")
            if not satisfying_options(self.preferences.preferences[options.aspect], options):
                raise ValueError(f"no option satisfies every preference for {options.aspect}")
        return self

    @property
    def ground_truth(self):
        return TravelGroundTruth.model_validate(self.task.success_criterion)

    def options_for(self, aspect):
        for options in self.aspects:
            if options.aspect == aspect:
                return options
        raise UnknownAspectError(f"unknown aspect '{aspect}'")


class TravelEnvironment:
    kind = ENVIRONMENT_KIND

    def __init__(self, fixture):
        self.fixture = fixture
        self.task = fixture.task
        self.ground_truth = fixture.ground_truth
        self.reset()

    def reset(self):
        self.prefs = self.fixture.preferences
        self.ledger = RecommendationLedger.empty(options.aspect for options in self.fixture.aspects)
        self.done = False
        return Observation(turn_index=1, source="user", content=self.fixture.user_script[0])

    def copy(self):
        clone = object.__new__(TravelEnvironment)
        clone.__dict__.update(self.__dict__)
        return clone

    def step(self, action, turn_index):
        next_turn = turn_index + 1
        if action.kind == "message":
            reply, self.prefs = user_reply(self.prefs, action.text)
            return StepOutcome(observation=Observation(turn_index=next_turn, source="user", content=reply), done=False)
        if action.kind == "tool_call":
            return StepOutcome(observation=Observation.from_tool(next_turn, self._search(action)), done=False)
        try:
            options = self.fixture.options_for(action.aspect)
            options.get(action.option_id)
            self.ledger, rejection = record_recommendation(self.ledger, action.aspect, action.option_id)
        except UnknownAspectError as exc:
            rejection = str(exc)
        if rejection:
            observation = Observation(turn_index=next_turn, source="system", content=f"error: {rejection}")
            return StepOutcome(observation=observation, done=False)
        self.done = self.ledger.complete
        content = f"Great, I'll go with {action.option_id} for the {_aspect_label(action.aspect)}."
        return StepOutcome(observation=Observation(turn_index=next_turn, source="user", content=content), done=self.done)

    def _search(self, action):
        if action.tool_name != "search_options":
            return {"error": f"unknown tool '{action.tool_name}' for environment '{ENVIRONMENT_KIND}'"}
        if set(action.tool_args) != {"aspect"}:
            return {"error": "search_options takes exactly one argument: aspect"}
        try:
            options = self.fixture.options_for(str(action.tool_args["aspect"]))
        except UnknownAspectError as exc:
            return {"error": str(exc)}
        return {"aspect": options.aspect, "options": [option.model_dump(mode="json") for option in options.options]}

    def evaluate(self):
        return task_score(self.ledger, self.prefs, self.fixture.aspects)

    def critic_context(self, proposal):
        if proposal.kind == "recommendation":
            try:
                return CriticContext(text=render_options(self.fixture.options_for(proposal.aspect)), aspect=proposal.aspect)
            except UnknownAspectError:
                pass
        listing = "\n\n".join(f"{o.aspect}:\n{render_options(o)}" for o in self.fixture.aspects)
        return CriticContext(text=listing, aspect=", ".join(o.aspect for o in self.fixture.aspects))

    def actor_context(self):
        return "\n".join(f"- {options.aspect}: {len(options.options)} options" for options in self.fixture.aspects)

    def judge(self, proposal):
        """Ground-truth check of a recommendation; other actions are always consistent."""
        if proposal.kind != "recommendation":
            return Judgement(consistent=True)
        try:
            options = self.fixture.options_for(proposal.aspect)
            options.get(proposal.option_id)
        except UnknownAspectError as exc:
            return Judgement(consistent=False, error_mode="violate_constraint", details=str(exc))
        optimal = self.ground_truth.optimal_options[proposal.aspect]
        expected = ActionProposal.recommendation(
            proposal.aspect, optimal[0], text=f"I recommend {optimal[0]} for your {_aspect_label(proposal.aspect)}.",
        )
        if self.ledger.recommendations[proposal.aspect] is not None:
            return Judgement(
                consistent=False, error_mode="redundant_recommendation",
                details=f"the {_aspect_label(proposal.aspect)} already has a final recommendation",
            )
        preferences = self.fixture.preferences.preferences[proposal.aspect]
        score = aspect_reward(proposal.aspect, proposal.option_id, self.fixture.preferences, options)
        if score == OPTIMAL_SCORE:
            return Judgement(consistent=True)
        if score == PRICIER_SCORE:
            return Judgement(
                consistent=False, error_mode="suboptimal_choice",
                details=f"{proposal.option_id} fits the user's preferences but a cheaper option also does",
                expected=expected,
            )
        failed = [p.template for p in preferences if not satisfies(options.get(proposal.option_id), p)]
        return Judgement(
            consistent=False, error_mode="violate_constraint",
            details=f"{proposal.option_id} does not meet the user's preferences: {' '.join(failed)}",
            expected=expected,
        )


# --- Task generation ---

class AttributeProfile(FrozenModel):
    attribute: str
    label: str
    comparator: Comparator
    values: tuple[Scalar, ...]
    triggers: tuple[str, ...]


class AspectProfile(FrozenModel):
    prefix: str
    price_range: tuple[float, float]
    attributes: tuple[AttributeProfile, ...]


ASPECT_PROFILES = {
    "flight": AspectProfile(prefix="FL", price_range=(120.0, 900.0), attributes=(
        AttributeProfile(attribute="stops", label="the number of stops", comparator="<=",
                         values=(0, 1, 2), triggers=("stops", "layover", "nonstop")),
        AttributeProfile(attribute="rating", label="an airline rating", comparator=">=",
                         values=(5, 6, 7, 8, 9, 10), triggers=("rating", "airline")),
        AttributeProfile(attribute="cabin", label="the cabin", comparator="in",
                         values=("economy", "premium_economy", "business"), triggers=("cabin", "class")),
    )),
    "apartment": AspectProfile(prefix="AP", price_range=(60.0, 400.0), attributes=(
        AttributeProfile(attribute="bedrooms", label="a number of bedrooms", comparator=">=",
                         values=(1, 2, 3, 4), triggers=("bedrooms", "rooms")),
        AttributeProfile(attribute="distance_km", label="a distance to the center in km", comparator="<=",
                         values=(1, 2, 3, 5, 8, 12), triggers=("distance", "location", "walk")),
        AttributeProfile(attribute="kitchen", label="a kitchen", comparator="=",
                         values=(True, False), triggers=("kitchen", "cook")),
    )),
    "rental_car": AspectProfile(prefix="RC", price_range=(30.0, 180.0), attributes=(
        AttributeProfile(attribute="seats", label="a number of seats", comparator=">=",
                         values=(2, 4, 5, 7), triggers=("seats", "passengers")),
        AttributeProfile(attribute="transmission", label="a transmission", comparator="=",
                         values=("automatic", "manual"), triggers=("transmission", "gearbox")),
        AttributeProfile(attribute="fuel", label="the fuel type", comparator="in",
                         values=("petrol", "diesel", "hybrid", "electric"), triggers=("fuel", "engine")),
    )),
    "restaurant": AspectProfile(prefix="RS", price_range=(15.0, 120.0), attributes=(
        AttributeProfile(attribute="stars", label="a star rating", comparator=">=",
                         values=(1, 2, 3, 4, 5), triggers=("stars", "reviews")),
        AttributeProfile(attribute="cuisine", label="the cuisine", comparator="in",
                         values=("italian", "japanese", "mexican", "indian", "french"), triggers=("cuisine", "food")),
        AttributeProfile(attribute="outdoor_seating", label="outdoor seating", comparator="=",
                         values=(True, False), triggers=("outdoor", "terrace")),
    )),
}


def _aspect_label(aspect):
    return aspect.replace("_", " ")


def _verbalize(aspect, label, comparator, threshold):
    where = f"For the {_aspect_label(aspect)}"
    if comparator == ">=":
        return f"{where}, I need {label} of at least {_format_value(threshold)}."
    if comparator == "<=":
        return f"{where}, I need {label} of at most {_format_value(threshold)}."
    if comparator == "=":
        return f"{where}, I want {label}: {_format_value(threshold)}."
    return f"{where}, {label} should be one of: {', '.join(_format_value(v) for v in threshold)}."


def _threshold_for(rng, profile, target_value):
    if profile.comparator == ">=":
        return rng.choice([v for v in profile.values if v <= target_value])
    if profile.comparator == "<=":
        return rng.choice([v for v in profile.values if v >= target_value])
    if profile.comparator == "=":
        return target_value
    extra = rng.choice([v for v in profile.values if v != target_value])
    return tuple(v for v in profile.values if v in (target_value, extra))


def _generate_aspect(rng, aspect, difficulty):
    """Options and preferences for one aspect.

    Guarantees a satisfying option, a satisfying option at a higher price and
    an option that violates at least one preference.
    """
    profile = ASPECT_PROFILES[aspect]
    low, high = profile.price_range
    chosen = sorted(rng.sample(range(len(profile.attributes)), difficulty - 1))
    attributes = [profile.attributes[i] for i in chosen]

    drafts = []
    for _ in range(rng.randint(8, 14)):
        drafts.append((round(rng.uniform(low, high), 2),
                       {a.attribute: rng.choice(a.values) for a in profile.attributes}))
    target_price, target_attributes = rng.choice(drafts)
    pricier = round(target_price + rng.uniform(5.0, 25.0), 2)
    budget = max(round(target_price * rng.uniform(1.1, 1.5), 2), round(pricier + 1.0, 2))
    drafts.append((pricier, dict(target_attributes)))

    preferences = [Preference(
        attribute="price", comparator="<=", threshold=budget, reveal_trigger=PRICE_TRIGGERS,
        template=f"My budget for the {_aspect_label(aspect)} is at most {budget:.2f} dollars.",
    )]
    for attribute in attributes:
        threshold = _threshold_for(rng, attribute, target_attributes[attribute.attribute])
        preferences.append(Preference(
            attribute=attribute.attribute, comparator=attribute.comparator, threshold=threshold,
            reveal_trigger=attribute.triggers,
            template=_verbalize(aspect, attribute.label, attribute.comparator, threshold),
        ))

    def build(rows):
        return AspectOptions(aspect=aspect, options=tuple(
            TravelOption(option_id=f"{profile.prefix}{n:02d}", price=price, attributes=attrs)
            for n, (price, attrs) in enumerate(rows, start=1)
        ))

    options = build(drafts)
    if len(satisfying_options(preferences, options)) == len(options.options):
        drafts.append((round(budget + rng.uniform(10.0, 50.0), 2), dict(target_attributes)))
        options = build(drafts)
    return options, tuple(preferences)


def _plan_aspect(options, preferences):
    """Intended actions for one aspect plus the perturbations of its recommendation."""
    label = _aspect_label(options.aspect)
    actions = [ActionProposal.message(f"What {p.reveal_trigger[0]} would you like for the {label}?")
               for p in preferences]
    actions.append(ActionProposal.tool_call("search_options", {"aspect": options.aspect}))
    optimal = optimal_option_ids(preferences, options)
    if not optimal:
        raise ValueError(f"no option satisfies every preference for {options.aspect}")
    actions.append(ActionProposal.recommendation(options.aspect, optimal[0], text=f"I recommend {optimal[0]} for your {label}."))

    def recommend(option):
        return ActionProposal.recommendation(options.aspect, option.option_id, text=f"I recommend {option.option_id} for your {label}.")

    feasible = satisfying_options(preferences, options)
    pricier = sorted((o for o in feasible if o.option_id not in optimal), key=lambda o: (o.price, o.option_id))
    violating = sorted((o for o in options.options if o not in feasible), key=lambda o: (o.price, o.option_id))
    table = {}
    if violating:
        table["violate_constraint"] = recommend(violating[0])
    if pricier:
        table["hallucinate_constraint"] = recommend(pricier[0])
        table["suboptimal_choice"] = recommend(pricier[-1])
    return actions, table, optimal


def compose_task(task_id, difficulty, aspects, preferences):
    """Builds a complete fixture from per-aspect options and preferences."""
    intended = []
    perturbations = {}
    optimal_options = {}
    for options in aspects:
        actions, table, optimal = _plan_aspect(options, preferences[options.aspect])
        intended.extend(actions)
        perturbations[len(intended)] = table
        optimal_options[options.aspect] = optimal
    names = [options.aspect for options in aspects]
    instruction = (f"I'm planning a trip and need a {' and a '.join(_aspect_label(n) for n in names)}. "
                   "Please recommend exactly one option for each.")
    gt = TravelGroundTruth(aspects=tuple(names), optimal_options=optimal_options)
    task = TaskSpec(
        task_id=task_id, environment_id=environment_id_for(difficulty), instruction=instruction,
        user_script_id=task_id, success_criterion=gt.model_dump(mode="json"),
        horizon=len(intended) + 2,
    )
    return TravelFixture(
        task=task, user_script=(instruction,), intended_actions=tuple(intended),
        perturbations=perturbations, difficulty=difficulty, aspects=tuple(aspects),
        preferences=PreferenceSet(preferences=dict(preferences)),
    )


def generate_tasks(n, difficulty, seed):
    """Seeded generator of n two-aspect travel fixtures at the given difficulty."""
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}, got {difficulty}")
    fixtures = []
    for index in range(n):
        rng = random.Random(f"travel:{difficulty}:{seed}:{index}")
        names = rng.sample(sorted(ASPECT_PROFILES), ASPECTS_PER_TASK)
        aspects = []
        preferences = {}
        for name in names:
            options, prefs = _generate_aspect(rng, name, difficulty)
            aspects.append(options)
            preferences[name] = prefs
        fixtures.append(compose_task(f"{environment_id_for(difficulty)}-{seed}-{index:03d}", difficulty, aspects, preferences))
    logger.info("generated {} travel tasks (difficulty {}, seed {})", n, difficulty, seed)
    return fixtures
