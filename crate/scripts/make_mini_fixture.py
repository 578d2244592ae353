"""Writes the 50-entity mini dataset and its recorded stub responses.

Usage: python scripts/make_mini_fixture.py
Requires the `transformers` package (for the length check only).

Outputs, under crates/cli/tests/fixtures/:
  mini50/{entities,relations,train,valid,test}.txt   native layout
  mini50_responses.jsonl   {"digest", "prompt", "response"} per augmented entity

At a budget of 30 subwords every entity routes to compress or expand (none
has length exactly 30). Three responses are unusable on purpose (a refusal,
a verbatim echo and an empty answer), so 47 of 50 are effective.
"""
import hashlib
import json
import random
import re
from pathlib import Path

from transformers import BertTokenizer

ROOT = Path(__file__).resolve().parent.parent
VOCAB = ROOT / "data" / "vocab" / "bert-base-uncased.txt"
OUT = ROOT / "crates" / "cli" / "tests" / "fixtures"
BUDGET = 30

COMPRESS = (
    "{description} is the description of the {name}. "
    "Please summarize {description} in one sentence as briefly as possible:"
)
EXPAND = (
    "{name} means {description}, please use the shortest possible text "
    "to introduce the usage of {name}."
)

# key, name, category, description
ENTITIES = [
    ("bird", "bird", None, "warm-blooded egg-laying vertebrate with feathers and wings"),
    ("mammal", "mammal", None, "warm-blooded vertebrate that nurses its young with milk"),
    ("fish", "fish", None, "cold-blooded vertebrate that lives in water and breathes with gills"),
    ("insect", "insect", None, "small arthropod with six legs and usually two pairs of wings"),
    ("reptile", "reptile", None, "cold-blooded vertebrate covered in scales or plates"),
    ("wetland", "wetland", None, "low land saturated with water, such as a marsh or swamp"),
    ("forest", "forest", None, "large area covered chiefly with trees and undergrowth"),
    ("grassland", "grassland", None, "open land dominated by grasses"),
    ("ocean", "ocean", None, "a large body of salt water"),
    ("desert", "desert", None, "arid region with little rainfall and sparse vegetation"),
    ("heron", "heron", "bird",
     "any of various long-necked wading birds that hunt fish and frogs in shallow water, usually standing "
     "motionless for a long time before striking quickly with a long pointed bill"),
    ("kingfisher", "kingfisher", "bird",
     "small brightly coloured bird with a large head and a long sharp beak that dives from a perch above "
     "streams and ponds to catch small fish, often returning to the same branch to eat"),
    ("owl", "owl", "bird", "nocturnal bird of prey with large eyes"),
    ("sparrow", "sparrow", "bird", "small brown songbird"),
    ("albatross", "albatross", "bird",
     "very large seabird of the southern oceans with extremely long narrow wings that allow it to glide "
     "for hours over the open sea with almost no flapping, returning to land only to breed"),
    ("woodpecker", "woodpecker", "bird", "bird that drills into tree bark for insects"),
    ("flamingo", "flamingo", "bird",
     "tall pink wading bird with a long neck, thin legs and a downturned bill used to filter small "
     "shrimp and algae from the mud of salty lagoons and shallow lakes"),
    ("ostrich", "ostrich", "bird", "large flightless bird of africa"),
    ("beaver", "beaver", "mammal",
     "large semiaquatic rodent with a broad flat tail and strong front teeth that fells trees to build "
     "dams and lodges across streams, creating ponds that change the surrounding landscape"),
    ("otter", "otter", "mammal", "playful aquatic mammal with webbed feet"),
    ("deer", "deer", "mammal",
     "hoofed grazing and browsing mammal in which the males of most species grow and shed a new set of "
     "branched antlers every year, found in forests and open country on most continents"),
    ("fox", "fox", "mammal", "small wild dog with a bushy tail"),
    ("bison", "bison", "mammal",
     "massive humped bovine with a shaggy dark mane that once roamed the grasslands in enormous herds "
     "and was hunted almost to extinction before being protected in reserves"),
    ("camel", "camel", "mammal", "humped desert mammal used for transport"),
    ("whale", "whale", "mammal",
     "very large marine mammal with a streamlined body, flippers and a horizontal tail fluke that "
     "breathes air through a blowhole on top of its head and may migrate thousands of kilometres"),
    ("bat", "bat", "mammal", "nocturnal flying mammal"),
    ("salmon", "salmon", "fish",
     "large silvery fish that hatches in fresh water, migrates to the sea to feed and grow, and later "
     "returns upstream to the river where it was born in order to spawn and usually die"),
    ("trout", "trout", "fish", "freshwater fish related to salmon"),
    ("shark", "shark", "fish",
     "predatory marine fish with a skeleton of cartilage, several rows of replaceable teeth and rough "
     "skin covered in tiny toothlike scales, ranging from small reef species to giant filter feeders"),
    ("eel", "eel", "fish", "long snakelike fish"),
    ("tuna", "tuna", "fish", "fast swimming ocean fish"),
    ("catfish", "catfish", "fish",
     "bottom-dwelling fish with sensitive barbels around the mouth that resemble whiskers, common in "
     "slow rivers and muddy ponds where it feeds mostly at night on whatever it can find"),
    ("bee", "bee", "insect",
     "flying insect that collects nectar and pollen from flowers, lives in organized colonies in many "
     "species, and plays a major role in pollinating crops and wild plants"),
    ("ant", "ant", "insect", "small social insect living in colonies"),
    ("dragonfly", "dragonfly", "insect",
     "slender predatory insect with two pairs of transparent veined wings and very large compound eyes, "
     "whose larvae grow underwater for months or years before emerging as adults"),
    ("beetle", "beetle", "insect", "insect with hard wing covers"),
    ("locust", "locust", "insect",
     "large grasshopper that can change its behaviour and form huge migrating swarms when conditions "
     "are crowded, destroying crops and pasture over vast areas in a few days"),
    ("mosquito", "mosquito", "insect", "small fly whose female sucks blood"),
    ("termite", "termite", "insect", "pale insect that feeds on wood"),
    ("crocodile", "crocodile", "reptile",
     "large aquatic reptile with a long snout, powerful jaws and thick armoured skin that lies in wait "
     "at the edge of rivers and swamps to ambush animals coming to drink"),
    ("iguana", "iguana", "reptile", "large tropical lizard"),
    ("tortoise", "tortoise", "reptile",
     "slow-moving land reptile protected by a high domed shell into which it can withdraw its head and "
     "legs, some species living for more than a century in dry grassland and scrub"),
    ("cobra", "cobra", "reptile", "venomous snake with a hood"),
    ("gecko", "gecko", "reptile", "small lizard with adhesive toe pads"),
    ("chameleon", "chameleon", "reptile",
     "slow-moving lizard with independently rotating eyes, a long sticky tongue that it shoots out to "
     "catch insects, and skin that can change colour with mood and temperature"),
    ("rattlesnake", "rattlesnake", "reptile", "venomous snake of the americas"),
    ("seal", "seal", "mammal", "marine mammal with flippers"),
    ("penguin", "penguin", "bird",
     "flightless seabird of the southern hemisphere with black and white plumage and wings adapted "
     "into stiff flippers, which it uses to swim quickly underwater while hunting fish and krill"),
    ("lizard", "lizard", "reptile", "reptile with a long body and tail"),
    ("moth", "moth", "insect", "nocturnal insect related to the butterfly"),
]

HABITAT = {
    "heron": "wetland", "kingfisher": "wetland", "owl": "forest", "sparrow": "grassland",
    "albatross": "ocean", "woodpecker": "forest", "flamingo": "wetland", "ostrich": "grassland",
    "beaver": "wetland", "otter": "wetland", "deer": "forest", "fox": "forest", "bison": "grassland",
    "camel": "desert", "whale": "ocean", "bat": "forest", "salmon": "ocean", "trout": "wetland",
    "shark": "ocean", "eel": "ocean", "tuna": "ocean", "catfish": "wetland", "bee": "grassland",
    "ant": "forest", "dragonfly": "wetland", "beetle": "forest", "locust": "grassland",
    "mosquito": "wetland", "termite": "desert", "crocodile": "wetland", "iguana": "forest",
    "tortoise": "desert", "cobra": "grassland", "gecko": "desert", "chameleon": "forest",
    "rattlesnake": "desert", "seal": "ocean", "penguin": "ocean", "lizard": "desert", "moth": "forest",
}

PREY = [
    ("heron", "fish"), ("kingfisher", "fish"), ("owl", "mammal"), ("albatross", "fish"),
    ("woodpecker", "insect"), ("otter", "fish"), ("fox", "bird"), ("bat", "insect"), ("shark", "fish"),
    ("seal", "fish"), ("penguin", "fish"), ("crocodile", "mammal"), ("chameleon", "insect"),
    ("gecko", "insect"), ("lizard", "insect"), ("cobra", "mammal"), ("rattlesnake", "mammal"),
    ("dragonfly", "insect"), ("salmon", "insect"), ("trout", "insect"), ("catfish", "fish"),
    ("heron", "reptile"), ("fox", "insect"), ("owl", "bird"), ("shark", "mammal"),
]

RELATIONS = [
    ("_hypernym", "hypernym"),
    ("_lives_in", "lives in"),
    ("_preys_on", "preys on"),
    ("_shares_habitat_with", "shares habitat with"),
]

# Responses for compressed entities (one-sentence summaries), some wrapped
# in the conversational filler the cleaner removes.
SUMMARIES = {
    "heron": "A long-necked wading bird that spears fish and frogs in shallow water.",
    "kingfisher": "Sure! Here is a one-sentence summary: A small bright bird that dives from perches to catch fish.",
    "albatross": "\"A huge southern seabird that glides over the open sea on long narrow wings.\"",
    "flamingo": "A tall pink wading bird that filters shrimp and algae from salty mud.",
    "beaver": "A large rodent that fells trees to dam streams and build lodges.",
    "deer": "A hoofed browsing mammal whose males grow new antlers each year.",
    "bison": "Certainly. A massive humped bovine of the grasslands, once nearly hunted out.",
    "whale": "A huge air-breathing marine mammal that migrates long distances.",
    "salmon": "A fish that hatches in rivers, grows at sea and returns upstream to spawn.",
    "shark": "Summary: A cartilaginous predatory fish with replaceable teeth and rough skin.",
    "catfish": "A whiskered bottom-feeding fish of slow rivers and muddy ponds.",
    "bee": "A pollinating insect that gathers nectar and pollen, often in colonies.",
    "dragonfly": "A predatory insect with clear veined wings and big eyes whose larvae live underwater.",
    "locust": "A grasshopper that forms crop-destroying swarms when crowded.",
    "crocodile": "A large armoured aquatic reptile that ambushes animals at the water's edge.",
    "tortoise": "Here is the summary: A slow, long-lived land reptile with a high domed shell.",
    "chameleon": "A colour-changing lizard with rotating eyes and a sticky projectile tongue.",
    "penguin": "A flightless southern seabird that swims with flipper-like wings. I hope this helps!",
}

# Responses for expanded entities (short usage texts).
USAGES = {
    "bird": "Bird is used as a general term, as in 'a bird built a nest in the hedge'.",
    "mammal": "Mammal names the class of animals that feed their young on milk, e.g. 'the whale is a mammal'.",
    "fish": "Fish refers to aquatic animals, as in 'the lake is full of fish'; it is also a verb meaning to catch them.",
    "insect": "Insect is used for small six-legged creatures, as in 'an insect landed on the window'.",
    "reptile": "Reptile denotes scaly cold-blooded animals such as snakes and lizards.",
    "wetland": "Wetland describes marshy ground, as in 'the wetland shelters migrating birds'.",
    "forest": "Forest names a large wooded area, as in 'they walked through the forest'.",
    "grassland": "Grassland is used for prairie or savanna, as in 'bison graze the grassland'.",
    "ocean": "Ocean refers to the sea at large, as in 'ships crossed the ocean'.",
    "desert": "Desert names a dry barren region, as in 'camels cross the desert'.",
    "owl": "Owl is used for night-hunting birds, as in 'an owl hooted in the dark'.",
    "sparrow": "Sparrow names a common small bird, as in 'sparrows chirped on the roof'.",
    "woodpecker": "Woodpecker refers to a bird that taps trees, as in 'a woodpecker drummed on the oak'.",
    "ostrich": "Ostrich names the largest living bird, which runs rather than flies.",
    "otter": "Otter is used for a river mammal, as in 'the otter slid into the stream'.",
    "fox": "Fox names a cunning wild canine, as in 'the fox raided the henhouse'.",
    "camel": "Camel refers to a pack animal of dry lands, as in 'they rode camels across the dunes'.",
    "bat": "Bat here means the flying mammal, as in 'bats leave the cave at dusk'.",
    "trout": "Trout names a freshwater game fish, as in 'he caught a trout in the brook'.",
    "eel": "Eel refers to a slippery elongated fish, as in 'eels hide among the rocks'.",
    "tuna": "Tuna names a large ocean fish often eaten as food, as in 'a tuna sandwich'.",
    "ant": "Ant is used for tiny colonial insects, as in 'ants marched across the table'.",
    "beetle": "Beetle names a hard-shelled insect, as in 'a beetle crawled under the log'.",
    "mosquito": "Mosquito refers to a biting fly, as in 'a mosquito bit my arm'.",
    "termite": "Termite names a wood-eating insect, as in 'termites damaged the beams'.",
    "iguana": "Iguana refers to a big plant-eating lizard, as in 'an iguana basked on the wall'.",
    "cobra": "Cobra names a hooded venomous snake, as in 'the cobra spread its hood'.",
    "gecko": "Gecko refers to a small climbing lizard, as in 'a gecko ran up the wall'.",
    "rattlesnake": "Rattlesnake names a snake that shakes its tail as a warning.",
    "seal": "Seal here means the marine mammal, as in 'seals lay on the rocks'.",
    "lizard": "Lizard is used for scaly four-legged reptiles, as in 'a lizard sunned itself'.",
    "moth": "Moth names a night-flying insect, as in 'moths gathered around the lamp'.",
}

INEFFECTIVE = {
    "rattlesnake": "I'm sorry, but I cannot help with that request.",  # refusal
    "whale": None,  # echo of the original description, filled in below
    "catfish": "   ",  # empty
}


def render(body, name, description):
    return re.sub(
        r"\{name\}|\{description\}",
        lambda m: name if m.group(0) == "{name}" else description,
        body,
    )


def write(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


def main():
    tok = BertTokenizer(str(VOCAB), do_lower_case=True, split_special_tokens=True)
    keys = [e[0] for e in ENTITIES]
    assert len(keys) == 50 and len(set(keys)) == 50

    actions = {}
    for key, name, _, desc in ENTITIES:
        length = len(tok.tokenize(name)) + len(tok.tokenize(desc))
        assert length != BUDGET, f"{key} has length exactly {BUDGET}"
        actions[key] = "compress" if length > BUDGET else "expand"

    responses = {}
    for key, _, _, desc in ENTITIES:
        table = SUMMARIES if actions[key] == "compress" else USAGES
        if key in INEFFECTIVE:
            responses[key] = desc if INEFFECTIVE[key] is None else INEFFECTIVE[key]
        else:
            assert key in table, f"no {actions[key]} response for {key}"
            responses[key] = table[key]

    triples = []
    for key, _, cat, _ in ENTITIES:
        if cat:
            triples.append((key, "_hypernym", cat))
            triples.append((key, "_lives_in", HABITAT[key]))
    for a, b in PREY:
        triples.append((a, "_preys_on", b))
    by_habitat = {}
    for k, h in HABITAT.items():
        by_habitat.setdefault(h, []).append(k)
    for members in by_habitat.values():
        members.sort()
        for i in range(len(members) - 1):
            triples.append((members[i], "_shares_habitat_with", members[i + 1]))
    triples = sorted(set(triples))
    rng = random.Random(7)
    rng.shuffle(triples)

    # Hold out triples whose entities and relations stay covered by train.
    train, held = [], []
    for t in triples:
        if len(held) < 30 and rng.random() < 0.25:
            held.append(t)
        else:
            train.append(t)
    seen = {x for h, r, t in train for x in (h, r, t)}
    for t in list(held):
        if not {t[0], t[1], t[2]} <= seen:
            held.remove(t)
            train.append(t)
    valid, test = held[: len(held) // 2], held[len(held) // 2 :]

    data = OUT / "mini50"
    data.mkdir(parents=True, exist_ok=True)
    write(data / "entities.txt", [(k, n, d) for k, n, _, d in ENTITIES])
    write(data / "relations.txt", RELATIONS)
    write(data / "train.txt", train)
    write(data / "valid.txt", valid)
    write(data / "test.txt", test)

    with (OUT / "mini50_responses.jsonl").open("w", encoding="utf-8") as f:
        for key, name, _, desc in ENTITIES:
            body = COMPRESS if actions[key] == "compress" else EXPAND
            prompt = render(body, name, desc)
            digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
            f.write(json.dumps({"digest": digest, "prompt": prompt, "response": responses[key]}, ensure_ascii=False) + "\n")

    n_c = sum(a == "compress" for a in actions.values())
    print(f"compress={n_c} expand={50 - n_c} train={len(train)} valid={len(valid)} test={len(test)}")


if __name__ == "__main__":
    main()
