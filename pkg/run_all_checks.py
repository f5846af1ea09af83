import time

import critic_gate

# --- Configuration ---
DEMO_DIR = "runs/demo"
SUITE_PATH = f"{DEMO_DIR}/retail_suite.jsonl"
ERROR_RATE = "0.3"
RUNS_PER_TASK = "5"


STAGES = [
    ("Generating retail suite", ["gen-suite", "--env", "retail", "--n", "50", "--seed", "7", "--output", SUITE_PATH]),
    ("Running actor-only baseline", ["run", "--suite", SUITE_PATH, "--critic", "none", "--error-rate", ERROR_RATE,
                                     "--runs", RUNS_PER_TASK, "--label", "actor_only",
                                     "--output-dir", f"{DEMO_DIR}/actor_only"]),
    ("Running actor-critic with oracle critic", ["run", "--suite", SUITE_PATH, "--critic", "oracle",
                                                 "--error-rate", ERROR_RATE, "--runs", RUNS_PER_TASK,
                                                 "--label", "actor_critic", "--output-dir", f"{DEMO_DIR}/actor_critic"]),
    ("Comparing runs", ["eval", f"{DEMO_DIR}/actor_only", f"{DEMO_DIR}/actor_critic",
                        "--json", f"{DEMO_DIR}/uplift.json", "--html", f"{DEMO_DIR}/uplift.html"]),
    ("Building critic dataset", ["datagen", "--suite", SUITE_PATH, "--critic", "oracle", "--error-rate", ERROR_RATE,
                                 "--k", RUNS_PER_TASK, "--psi", "2", "--output-dir", f"{DEMO_DIR}/datagen"]),
]


def run_all():
    """
    Runs every pipeline stage sequentially, continuing past failures.
    """
    start_time = time.time()
    print("Starting all pipeline stages...")
    print("-" * 40)

    failures = 0
    for number, (title, argv) in enumerate(STAGES, start=1):
        print(f"\n[{number}/{len(STAGES)}] {title}...")
        try:
            status = critic_gate.main(argv)
        except Exception as e:
            print(f"  -> ERROR: {title} failed: {e}")
            failures += 1
            continue
        if status != critic_gate.EXIT_OK:
            print(f"  -> ERROR: {title} exited with status {status}")
            failures += 1

    end_time = time.time()
    print("-" * 40)
    print(f"All stages have been processed in {end_time - start_time:.2f} seconds ({failures} failed).")
    return failures


if __name__ == "__main__":
    run_all()
