"""Synthesize the cached response-text fixtures for the size-database generator.

Offline stand-in for collecting real language-model output: builds a curated
vocabulary of everyday objects with plausible largest dimensions, expands it
with adjective variants to exactly 2200 unique phrases (about 90 percent
under two meters, 1 cm up to a 300 m cruise ship), and spreads the lines over
nine response rounds with a handful of duplicated phrases (differing sizes,
to exercise median merging) plus a few malformed lines.

Run from the repository root:  python3 export/tools/make_fixture_responses.py
"""

from __future__ import annotations

import hashlib
from pathlib import Path

OUT = Path(__file__).parent.parent / "cached" / "llm_responses"

TARGET_ENTRIES = 2200
TARGET_OVER_2M = 220  # ten percent
ROUNDS = 9

# (noun phrase, typical largest dimension in meters)
NOUNS = [
    # kitchen
    ("coffee mug", 0.10), ("tea cup", 0.09), ("drinking glass", 0.14), ("wine glass", 0.21),
    ("dinner plate", 0.26), ("soup bowl", 0.16), ("frying pan", 0.28), ("saucepan", 0.24),
    ("kettle", 0.22), ("toaster", 0.28), ("blender", 0.40), ("cutting board", 0.36),
    ("kitchen knife", 0.30), ("dinner fork", 0.19), ("soup spoon", 0.18), ("spatula", 0.31),
    ("whisk", 0.28), ("rolling pin", 0.43), ("colander", 0.30), ("mixing bowl", 0.28),
    ("teapot", 0.22), ("pepper grinder", 0.20), ("salt shaker", 0.10), ("butter dish", 0.18),
    ("water pitcher", 0.25), ("soup ladle", 0.32), ("measuring cup", 0.15), ("oven mitt", 0.28),
    ("dish rack", 0.45), ("trash can", 0.62), ("coffee maker", 0.36), ("microwave oven", 0.50),
    ("wooden tray", 0.45), ("thermos bottle", 0.28), ("egg carton", 0.30), ("jam jar", 0.11),
    ("milk carton", 0.24), ("cereal box", 0.32), ("wine bottle", 0.30), ("beer can", 0.12),
    # office
    ("laptop", 0.35), ("computer mouse", 0.11), ("computer keyboard", 0.45), ("computer monitor", 0.61),
    ("desk lamp", 0.45), ("stapler", 0.16), ("scissors", 0.20), ("pencil", 0.19),
    ("ballpoint pen", 0.14), ("notebook", 0.25), ("hardcover book", 0.24), ("ruler", 0.31),
    ("calculator", 0.16), ("clipboard", 0.33), ("envelope", 0.24), ("desk phone", 0.21),
    ("smartphone", 0.15), ("tablet computer", 0.25), ("printer", 0.46), ("paper shredder", 0.40),
    ("filing cabinet", 1.30), ("office chair", 1.00), ("writing desk", 1.40), ("whiteboard", 1.80),
    ("corkboard", 0.90), ("wastebasket", 0.36), ("water cooler", 1.10), ("paper clip", 0.03),
    ("rubber eraser", 0.05), ("highlighter", 0.14), ("marker pen", 0.14), ("sticky note", 0.08),
    ("thumbtack", 0.01), ("binder", 0.29), ("hole punch", 0.17), ("letter opener", 0.22),
    # living room / household
    ("sofa", 2.20), ("armchair", 0.95), ("coffee table", 1.10), ("bookshelf", 1.80),
    ("floor lamp", 1.60), ("television", 1.25), ("remote control", 0.18), ("picture frame", 0.32),
    ("flower vase", 0.31), ("candle", 0.15), ("wall clock", 0.31), ("area rug", 2.40),
    ("window curtain", 2.10), ("throw pillow", 0.50), ("wool blanket", 2.00), ("wall mirror", 1.20),
    ("plant pot", 0.30), ("magazine rack", 0.50), ("table fan", 0.40), ("space heater", 0.45),
    ("air purifier", 0.60), ("humidifier", 0.35), ("photo album", 0.33), ("jewelry box", 0.26),
    ("key holder", 0.22), ("doormat", 0.75), ("coat rack", 1.75), ("umbrella stand", 0.60),
    # bedroom / bathroom
    ("double bed", 2.05), ("mattress", 2.00), ("wardrobe", 2.10), ("dresser", 1.20),
    ("nightstand", 0.60), ("toothbrush", 0.19), ("hair dryer", 0.26), ("bath towel", 1.40),
    ("bathtub", 1.70), ("shower head", 0.26), ("soap dispenser", 0.18), ("laundry basket", 0.60),
    ("clothes iron", 0.28), ("ironing board", 1.40), ("vacuum cleaner", 1.10), ("broom", 1.40),
    ("mop", 1.50), ("cleaning bucket", 0.36), ("toilet brush", 0.40), ("bathroom scale", 0.33),
    ("hand soap", 0.10), ("shampoo bottle", 0.24), ("razor", 0.14), ("hairbrush", 0.23),
    # tools / garden
    ("hammer", 0.33), ("screwdriver", 0.25), ("adjustable wrench", 0.25), ("pliers", 0.20),
    ("handsaw", 0.60), ("power drill", 0.26), ("tape measure", 0.08), ("spirit level", 0.61),
    ("toolbox", 0.52), ("flashlight", 0.25), ("stepladder", 3.00), ("wheelbarrow", 1.50),
    ("garden shovel", 1.50), ("garden rake", 1.60), ("watering can", 0.36), ("lawn mower", 1.70),
    ("axe", 0.90), ("crowbar", 0.91), ("paint brush", 0.25), ("paint roller", 0.41),
    ("work glove", 0.26), ("safety helmet", 0.30), ("extension cord", 1.50), ("garden hose reel", 0.55),
    ("hedge trimmer", 1.00), ("leaf blower", 0.95), ("garden gnome", 0.50), ("flowerpot", 0.35),
    ("birdhouse", 0.30), ("planter box", 0.90),
    # sports / outdoors
    ("basketball", 0.24), ("soccer ball", 0.22), ("tennis racket", 0.69), ("baseball bat", 0.85),
    ("golf club", 1.10), ("skateboard", 0.80), ("bicycle", 1.80), ("bicycle helmet", 0.30),
    ("dumbbell", 0.40), ("yoga mat", 1.80), ("surfboard", 2.20), ("kayak", 3.20),
    ("canoe", 4.50), ("tennis ball", 0.07), ("frisbee", 0.27), ("bowling ball", 0.22),
    ("hockey stick", 1.50), ("ski pole", 1.20), ("snowboard", 1.55), ("fishing rod", 2.10),
    ("camping tent", 2.40), ("sleeping bag", 2.00), ("hiking backpack", 0.70), ("picnic table", 1.80),
    ("park bench", 1.80), ("barbecue grill", 1.30), ("swing set", 3.40), ("trampoline", 3.70),
    ("pogo stick", 1.10), ("jump rope", 2.70), ("exercise bike", 1.20), ("treadmill", 1.80),
    # vehicles / street
    ("car", 4.50), ("pickup truck", 5.30), ("city bus", 12.00), ("motorcycle", 2.10),
    ("kick scooter", 1.20), ("sailboat", 9.00), ("rowboat", 3.70), ("cruise ship", 300.00),
    ("passenger airplane", 38.00), ("helicopter", 14.00), ("farm tractor", 4.30), ("cargo trailer", 8.00),
    ("forklift", 2.50), ("golf cart", 2.40), ("street lamp", 4.00), ("mailbox", 1.10),
    ("fire hydrant", 0.75), ("traffic cone", 0.70), ("shopping cart", 1.00), ("stroller", 1.00),
    ("canoe paddle", 1.40), ("car tire", 0.65), ("license plate", 0.30), ("bicycle pump", 0.55),
    # music / media
    ("acoustic guitar", 1.00), ("violin", 0.60), ("upright piano", 1.50), ("snare drum", 0.60),
    ("trumpet", 0.48), ("flute", 0.67), ("cello", 1.20), ("microphone", 0.25),
    ("loudspeaker", 0.60), ("headphones", 0.20), ("vinyl record", 0.30), ("record player", 0.45),
    # personal / misc
    ("suitcase", 0.70), ("backpack", 0.50), ("handbag", 0.35), ("wallet", 0.11),
    ("wristwatch", 0.24), ("sunglasses", 0.15), ("baseball cap", 0.28), ("leather shoe", 0.29),
    ("winter boot", 0.31), ("sneaker", 0.29), ("camera", 0.13), ("camera tripod", 1.50),
    ("binoculars", 0.18), ("telescope", 1.20), ("desk globe", 0.40), ("chess board", 0.50),
    ("teddy bear", 0.40), ("toy car", 0.12), ("board game", 0.50), ("jigsaw puzzle", 0.50),
    ("birdcage", 0.60), ("fish tank", 0.90), ("dog bed", 0.90), ("cat tree", 1.50),
    ("baby crib", 1.40), ("high chair", 1.00), ("umbrella", 1.00), ("walking cane", 0.92),
    ("first aid kit", 0.30), ("fire extinguisher", 0.55), ("sewing machine", 0.45), ("knitting needle", 0.35),
]

SIZE_ADJECTIVES = [("small", 0.72), ("large", 1.28), ("mini", 0.50), ("oversized", 1.55)]
STYLE_ADJECTIVES = [
    "wooden", "plastic", "metal", "ceramic", "leather", "vintage", "modern",
    "folding", "portable", "decorative", "heavy", "lightweight", "colorful",
]


def article_for(phrase: str) -> str:
    return "an" if phrase[0] in "aeiou" else "a"


def jitter(text: str, lo=0.92, hi=1.08) -> float:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    u = int.from_bytes(digest[8:16], "little") / 2**64
    return lo + u * (hi - lo)


def build_vocabulary():
    candidates = []  # (text, scale, noun_index, variant_rank)
    for idx, (noun, base) in enumerate(NOUNS):
        variants = [("", 1.0)]
        # Size adjectives read oddly on vehicles and vessels; they would also
        # push past the 300 m ceiling set by the cruise ship.
        if base < 8.0:
            variants += [(adj, mult) for adj, mult in SIZE_ADJECTIVES]
        variants += [(adj, 1.0) for adj in STYLE_ADJECTIVES]
        for rank, (adj, mult) in enumerate(variants):
            words = f"{adj} {noun}".strip()
            text = f"{article_for(words)} {words}"
            if noun == "cruise ship":
                scale = base if adj == "" else round(base * 0.9, 3)
            else:
                scale = min(max(round(base * mult * jitter(text), 3), 0.01), 299.0)
            candidates.append((text, scale, idx, rank))
    return candidates


def select_entries(candidates):
    """Round-robin by variant rank so every noun stays represented, filling
    the under/over two-meter pools to their exact targets."""
    under = [c for c in candidates if c[1] < 2.0]
    over = [c for c in candidates if c[1] >= 2.0]
    under.sort(key=lambda c: (c[3], c[2]))
    over.sort(key=lambda c: (c[3], c[2]))
    n_over = min(TARGET_OVER_2M, len(over))
    chosen = over[:n_over] + under[: TARGET_ENTRIES - n_over]
    if len(chosen) < TARGET_ENTRIES:
        raise SystemExit(
            f"vocabulary too small: {len(chosen)} < {TARGET_ENTRIES} "
            f"(under={len(under)}, over={len(over)})"
        )
    return {text: scale for text, scale, _, _ in chosen}


def main():
    entries = select_entries(build_vocabulary())
    assert len(entries) == TARGET_ENTRIES
    over = sum(1 for s in entries.values() if s >= 2.0)
    print(f"{len(entries)} entries, {over} at or over 2 m ({100 * (1 - over / len(entries)):.1f}% under)")

    # Deterministic shuffle by text hash, then deal into rounds.
    ordered = sorted(entries.items(), key=lambda kv: hashlib.sha256(kv[0].encode()).hexdigest())
    rounds: list[list[str]] = [[] for _ in range(ROUNDS)]
    for i, (text, scale) in enumerate(ordered):
        rounds[i % ROUNDS].append(f"{text}: {scale:g}")

    # Cross-round duplicates with spread sizes: the median must pick the
    # canonical value, so add one lower and one higher repeat.
    for i, (text, scale) in enumerate(ordered[:30]):
        rounds[(i + 3) % ROUNDS].append(f"{text}: {round(scale * 0.85, 3):g}")
        rounds[(i + 6) % ROUNDS].append(f"{text}: {round(scale * 1.2, 3):g}")

    # A few malformed lines the generator must skip.
    rounds[0].append("here are some objects you asked for")
    rounds[2].append("a broken line without any size")
    rounds[4].append("a negative thing: -3")
    rounds[5].append("a sizeless thing: n/a")
    rounds[7].append(": 0.5")

    OUT.mkdir(parents=True, exist_ok=True)
    for i, lines in enumerate(rounds):
        (OUT / f"round_{i:02d}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {ROUNDS} rounds to {OUT}")


if __name__ == "__main__":
    main()
