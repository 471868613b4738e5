"""Regenerate the bundled fixture corpus and labeled CSV (deterministic)."""

import csv
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"

SUBJECTS = ["ang bata", "ang guro", "si Ana", "si Ben", "ang aso", "ang pusa",
            "ang kapitbahay", "ang tindera", "ang drayber", "ang estudyante"]
VERBS = ["kumain ng", "bumili ng", "nagluto ng", "naghanap ng", "nagdala ng",
         "kumuha ng", "nagtago ng", "naghugas ng"]
OBJECTS = ["kanin", "isda", "gulay", "tinapay", "mangga", "saging", "kape", "tubig"]
TAILS = ["kahapon", "kanina", "ngayon", "sa umaga", "sa gabi", "sa palengke",
         "sa bahay", "sa eskwela"]

GOOD = ["masarap", "maganda", "mabait", "masaya", "malinis", "matalino"]
BAD = ["pangit", "bastos", "tanga", "bobo", "salot", "walang kwenta"]


def make_corpus(rng, n=200, n_distinct=16):
    # a small pool of long, fixed sentences repeated many times keeps the
    # corpus memorizable (the LM overfit smoke test needs perplexity -> 1)
    pool = []
    for i in range(n_distinct):
        s = SUBJECTS[i % len(SUBJECTS)]
        v = VERBS[i % len(VERBS)]
        o = OBJECTS[i % len(OBJECTS)]
        o2 = OBJECTS[(i + 3) % len(OBJECTS)]
        t = TAILS[i % len(TAILS)]
        t2 = TAILS[(i + 5) % len(TAILS)]
        line = f"{s} {v} {o} at {o2} {t} at {t2} daw"
        if i % 5 == 0:
            line = line.upper()
        if i % 7 == 0:
            line += " grabeee"
        pool.append(line)
    return [pool[k] for k in rng.integers(0, n_distinct, size=n)]


def make_labeled(rng, n=60):
    rows = []
    for i in range(n):
        s = rng.choice(SUBJECTS)
        t = rng.choice(TAILS)
        if i % 2 == 0:
            w = rng.choice(GOOD)
            label = 0
        else:
            w = rng.choice(BAD)
            label = 1
        text = f"{w} talaga {s} {t}"
        if i % 15 == 0:
            text = f"{w}, oo, {s} {t}"  # exercises CSV quoting
        rows.append((text, label))
    return rows


def main():
    OUT.mkdir(exist_ok=True)
    rng = np.random.default_rng(20260823)
    with open(OUT / "corpus.txt", "w", encoding="utf-8") as f:
        for line in make_corpus(rng):
            f.write(line + "\n")
    with open(OUT / "labeled.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["text", "label"])
        for text, label in make_labeled(rng):
            w.writerow([text, label])
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
