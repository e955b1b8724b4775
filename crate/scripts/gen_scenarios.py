"""Regenerates crates/cometh/tests/fixtures/scenarios_300.json.

Six core actions, fifty scenarios each, with judgment counts drawn from a few
per-action profiles. Deterministic for a fixed seed.
"""
import json
import random
import sys

SEED = 20240611

AGENTS = [
    "A nurse", "A farmer", "A teacher", "A student", "A father", "A mother",
    "A soldier", "A shop owner", "A retired engineer", "A young lawyer",
    "A taxi driver", "A journalist", "A neighbor", "A teenager", "A doctor",
    "An elderly woman", "A mechanic", "A bank clerk", "A volunteer", "A chef",
]

CONTEXTS = [
    "late at night", "during a storm", "in a small village", "after losing their job",
    "in front of witnesses", "while on holiday", "during a power outage",
    "in a crowded city", "after months of hesitation", "without telling anyone",
]

ACTIONS = {
    "Euthanasia": {
        "verbs": ["ends the life of", "administers lethal medication to",
                  "helps a doctor euthanize", "disconnects the life support of",
                  "gives an overdose of morphine to"],
        "objects": ["a terminally ill patient", "a suffering elderly parent",
                    "a dying friend in great pain", "a patient in an irreversible coma",
                    "a cancer patient who begged for it"],
        "profiles": [(0.15, 0.25, 0.60), (0.45, 0.30, 0.25), (0.05, 0.20, 0.75)],
    },
    "Kill to Protect": {
        "verbs": ["shoots", "stabs", "kills", "fatally strikes", "poisons"],
        "objects": ["an armed intruder", "a stranger attacking a child",
                    "a man threatening his family", "a burglar holding a knife",
                    "an aggressor during a robbery"],
        "profiles": [(0.08, 0.33, 0.59), (0.55, 0.30, 0.15), (0.25, 0.45, 0.30)],
    },
    "Lie to Support": {
        "verbs": ["lies to", "tells a comforting falsehood to", "hides the truth from",
                  "invents a reassuring story for", "pretends everything is fine to"],
        "objects": ["a grieving widow", "a frightened child", "a sick friend",
                    "an anxious colleague", "a lonely grandparent"],
        "profiles": [(0.10, 0.30, 0.60), (0.35, 0.45, 0.20)],
    },
    "Lie by Interest": {
        "verbs": ["lies to", "deceives", "misleads", "fabricates documents for",
                  "makes false promises to"],
        "objects": ["an insurance company to get money", "a client to close a sale",
                    "a landlord to lower the rent", "an employer to get a promotion",
                    "a tax office to pay less"],
        "profiles": [(0.80, 0.15, 0.05), (0.55, 0.35, 0.10), (0.30, 0.50, 0.20)],
    },
    "Steal": {
        "verbs": ["steals", "takes without paying", "shoplifts", "pockets",
                  "secretly carries away"],
        "objects": ["food for starving children", "medicine for a sick child",
                    "luxury clothes from a boutique", "enemy rations from a depot",
                    "firewood from a neighbor"],
        "profiles": [(0.20, 0.30, 0.50), (0.75, 0.15, 0.10), (0.40, 0.40, 0.20)],
    },
    "Protest": {
        "verbs": ["joins an illegal protest against", "blocks a highway to oppose",
                  "occupies a government building to denounce",
                  "marches without a permit against", "chains themselves to a gate to fight"],
        "objects": ["a new pension reform", "police violence", "a polluting factory",
                    "the closure of a hospital", "election fraud"],
        "profiles": [(0.15, 0.35, 0.50), (0.50, 0.35, 0.15), (0.30, 0.30, 0.40)],
    },
}

SPECIAL = {
    ("Kill to Protect", 0): ("A farmer shoots a stranger walking toward his barn late at night.",
                             (3, 4, 10)),
    ("Euthanasia", 0): ("A nurse administers lethal medication to a terminally ill patient with consent.",
                        None),
    ("Steal", 0): ("A father steals food from neighbors and a fruit stall during a disaster to feed his starving children.",
                   None),
    ("Steal", 1): ("A soldier takes enemy rations from a military warehouse during civil unrest.",
                   None),
}


def draw_counts(rng, profile):
    n = rng.randint(14, 20)
    counts = [0, 0, 0]
    for _ in range(n):
        u = rng.random()
        counts[0 if u < profile[0] else 1 if u < profile[0] + profile[1] else 2] += 1
    return counts


def main(out):
    rng = random.Random(SEED)
    rows = []
    seen = set()
    for a_idx, (action, spec) in enumerate(ACTIONS.items()):
        for j in range(50):
            profile = spec["profiles"][rng.randrange(len(spec["profiles"]))]
            counts = draw_counts(rng, profile)
            special = SPECIAL.get((action, j))
            if special:
                text, fixed = special
                if fixed:
                    counts = list(fixed)
            else:
                text = None
                while text is None or text in seen:
                    text = "{} {} {} {}.".format(
                        rng.choice(AGENTS), rng.choice(spec["verbs"]),
                        rng.choice(spec["objects"]), rng.choice(CONTEXTS))
            seen.add(text)
            rows.append({
                "id": "s{:03d}".format(a_idx * 50 + j),
                "text": text,
                "language": "en",
                "ideal_action": action,
                "judgments": {"blame": counts[0], "neutral": counts[1], "support": counts[2]},
            })
    rng.shuffle(rows)
    with open(out, "w") as f:
        json.dump(rows, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/cometh/tests/fixtures/scenarios_300.json")
