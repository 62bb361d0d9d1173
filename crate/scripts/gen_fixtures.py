#!/usr/bin/env python3
"""Regenerates the bundled fixture corpus, question set and toy word list.

Everything is derived from a fixed seed, so rerunning the script reproduces
the committed files byte for byte.

    python3 scripts/gen_fixtures.py
"""

import collections
import json
import pathlib
import random
import re

ROOT = pathlib.Path(__file__).resolve().parent.parent
ASSETS = ROOT / "crates" / "core" / "assets"
FIXTURES = ASSETS / "fixtures"

rng = random.Random(20250517)

SYL_A = ["bar", "cal", "dor", "el", "fen", "gal", "har", "is", "jor", "kel", "lun", "mar",
         "nor", "or", "pel", "quin", "ros", "sal", "tor", "ul", "val", "wen", "yor", "zan"]
SYL_B = ["a", "e", "i", "o", "u", "ia", "ea"]
SYL_C = ["brook", "dale", "ford", "holm", "mere", "ton", "wick", "stead", "vale", "moor", "gate", "field"]
GIVEN = ["Ada", "Bram", "Cora", "Dario", "Edda", "Fenn", "Greta", "Hugo", "Ines", "Jonas", "Kira",
         "Lio", "Mira", "Nils", "Oda", "Pavel", "Rhea", "Soren", "Tove", "Ulla", "Viggo", "Wren",
         "Yara", "Zeno", "Alba", "Bo", "Cyra", "Dag", "Elin", "Finn", "Gaia", "Hale", "Ivo", "Jule",
         "Kai", "Lene", "Milo", "Nora", "Otto", "Pia"]
COUNTRIES = ["Astoria", "Belmark", "Corvania", "Drenland"]
REGIONS = {c: [f"{d} {c}" for d in ("Northern", "Southern", "Eastern", "Western")] for c in COUNTRIES}
SEAS = ["Amber Sea", "Grey Sea", "Silver Sea"]
JOBS = ["painter", "engineer", "novelist", "composer", "botanist", "architect", "film director", "physician"]
GENRES = ["drama", "comedy", "documentary", "thriller"]
INDUSTRIES = ["shipbuilding", "textiles", "printing", "glassmaking", "brewing"]

used = set()


def unique(make):
    while True:
        name = make()
        if name not in used:
            used.add(name)
            return name


def place_name():
    return (rng.choice(SYL_A) + rng.choice(SYL_B) + rng.choice(SYL_C)).capitalize()


def surname():
    return (rng.choice(SYL_A) + rng.choice(SYL_B) + rng.choice(["n", "s", "r", "l", "d"]) + rng.choice(SYL_C[:6])).capitalize()


rivers = []
for _ in range(30):
    name = unique(lambda: place_name()[:-2] + "an")
    rivers.append({"name": name, "length": rng.randrange(40, 900), "sea": rng.choice(SEAS),
                   "country": rng.choice(COUNTRIES)})

towns = []
for _ in range(45):
    country = rng.choice(COUNTRIES)
    towns.append({"name": unique(place_name), "country": country, "region": rng.choice(REGIONS[country]),
                  "founded": rng.randrange(1050, 1850), "river": rng.choice(rivers)["name"],
                  "population": rng.randrange(2, 400) * 1000, "industry": rng.choice(INDUSTRIES)})

people = []
for _ in range(45):
    town = rng.choice(towns)
    people.append({"name": unique(lambda: f"{rng.choice(GIVEN)} {surname()}"), "town": town["name"],
                   "country": town["country"], "born": rng.randrange(1820, 1990), "job": rng.choice(JOBS)})

films = []
directors = [p for p in people if p["job"] in ("film director", "novelist", "composer")] or people
for _ in range(40):
    who = rng.choice(directors)
    films.append({"title": "The " + unique(lambda: rng.choice(["Last", "Quiet", "Red", "Hidden", "Long", "Silver", "Winter", "Broken"])
                                         + " " + rng.choice(["Harbor", "Garden", "Letter", "Bridge", "Season", "Lantern", "Orchard", "Voyage"])),
                  "director": who["name"], "year": max(who["born"] + 22, rng.randrange(1900, 2020)),
                  "genre": rng.choice(GENRES), "town": rng.choice(towns)["name"]})

companies = []
for _ in range(40):
    founder = rng.choice(people)
    town = rng.choice(towns)
    companies.append({"name": unique(lambda: place_name() + " " + rng.choice(["Works", "Company", "Guild", "Press", "Mills"])),
                      "founder": founder["name"], "town": town["name"], "year": founder["born"] + rng.randrange(20, 50),
                      "industry": town["industry"]})

docs = []


def add(title, paragraphs):
    docs.append({"id": f"d{len(docs):03d}", "title": title, "text": "\n\n".join(paragraphs)})


for r in rivers:
    add(f"{r['name']} River", [
        f"The {r['name']} River is a river in {r['country']}. It flows for about {r['length']} kilometres before it reaches the {r['sea']}.",
        f"Several towns lie on the banks of the {r['name']} River. The river was used for trade in the past.",
    ])
for t in towns:
    add(t["name"], [
        f"{t['name']} is a town in the {t['region']} region of {t['country']}. It was founded in {t['founded']} on the banks of the {t['river']} River.",
        f"The population of {t['name']} is about {t['population']}. The main industry of {t['name']} is {t['industry']}. Visitors come to {t['name']} for its old market.",
    ])
for p in people:
    add(p["name"], [
        f"{p['name']} (born {p['born']}) is a {p['job']} from {p['country']}. {p['name']} was born in the town of {p['town']}.",
        f"{p['name']} studied in {p['town']} and later worked abroad. The work of {p['name']} is known across {p['country']}.",
    ])
for f in films:
    add(f["title"], [
        f"{f['title']} is a {f['year']} {f['genre']} film directed by {f['director']}. The film is set in the town of {f['town']}.",
        f"{f['title']} was shown at several festivals. Critics praised the score of {f['title']}.",
    ])
for c in companies:
    add(c["name"], [
        f"{c['name']} is a {c['industry']} company based in {c['town']}. It was founded in {c['year']} by {c['founder']}.",
        f"{c['name']} employs workers from the region. The company remains family owned.",
    ])
assert len(docs) == 200, len(docs)

town_by = {t["name"]: t for t in towns}
person_by = {p["name"]: p for p in people}


def distractors(pool, gold, k=3):
    opts = sorted({x for x in pool if x != gold})
    return rng.sample(opts, k)


def choices_with(gold, pool):
    opts = distractors(pool, gold) + [gold]
    rng.shuffle(opts)
    return opts


questions = []


def q(kind, question, answers, choices):
    questions.append({"id": f"q{len(questions):02d}", "question": question, "answers": answers,
                      "kind": kind, "choices": choices})


region_pool = [r for rs in REGIONS.values() for r in rs]
for p in rng.sample(people, 5):
    gold = town_by[p["town"]]["region"]
    q("open", f"In which region is the town where {p['name']} was born?", [gold], choices_with(gold, region_pool))
for f in rng.sample(films, 4):
    gold = town_by[f["town"]]["river"] + " River"
    q("open", f"On which river lies the town where the film {f['title']} is set?", [gold],
      choices_with(gold, [r["name"] + " River" for r in rivers]))
for _ in range(6):
    a, b = rng.sample(people, 2)
    same = a["country"] == b["country"]
    q("yes_no", f"Were {a['name']} and {b['name']} born in the same country?", ["yes" if same else "no"], ["yes", "no"])
letters = "ABCD"
for c in rng.sample(companies, 5):
    gold = person_by[c["founder"]]["town"]
    opts = choices_with(gold, [t["name"] for t in towns])
    listing = " ".join(f"({letters[i]}) {o}" for i, o in enumerate(opts))
    q("multiple_choice", f"In which town was the founder of {c['name']} born? {listing}",
      [letters[opts.index(gold)]], list(letters))
for p in rng.sample(people, 3):
    gold = str(town_by[p["town"]]["founded"])
    pool = [str(t["founded"]) for t in towns]
    q("numeric", f"In what year was the town where {p['name']} was born founded?", [gold], choices_with(gold, pool))
f = films[0]
q("fever", f"{f['title']} was directed by {f['director']}.", ["SUPPORTS"], ["SUPPORTS", "REFUTES", "NOT ENOUGH INFO"])
f = films[1]
other = next(p["name"] for p in people if p["name"] != f["director"])
q("fever", f"{f['title']} was directed by {other}.", ["REFUTES"], ["SUPPORTS", "REFUTES", "NOT ENOUGH INFO"])
assert len(questions) == 25

FIXTURES.mkdir(parents=True, exist_ok=True)
with open(FIXTURES / "corpus.jsonl", "w") as fh:
    for d in docs:
        fh.write(json.dumps(d, ensure_ascii=False) + "\n")
with open(FIXTURES / "questions.jsonl", "w") as fh:
    for x in questions:
        fh.write(json.dumps(x, ensure_ascii=False) + "\n")

# word list: whitespace-delimited words of the templates and fixtures,
# most frequent first, ties broken alphabetically
counts = collections.Counter()
for path in sorted((ASSETS / "templates").glob("*.txt")):
    counts.update(path.read_text().split())
for d in docs:
    counts.update(d["title"].split())
    counts.update(d["text"].split())
for x in questions:
    counts.update(x["question"].split())
    for c in x["choices"] + x["answers"]:
        counts.update(c.split())
for extra in ["\\boxed{yes}", "\\boxed{no}", "Thought", "Action", "Observation", "Search", "Lookup", "Finish",
              "#Q:", "#A:", "yes", "no", "SUPPORTS", "REFUTES"]:
    counts[extra] += 1
words = sorted(counts, key=lambda w: (-counts[w], w))
(ASSETS / "vocab.txt").write_text("\n".join(w for w in words if not re.search(r"\s", w)) + "\n")
print(f"{len(docs)} docs, {len(questions)} questions, {len(words)} words")
