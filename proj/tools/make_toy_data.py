"""Regenerates the bundled toy datasets in data/ (deterministic)."""
import csv
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data"

FILLER = ("the movie was this film plot acting story scenes it felt overall and really quite "
          "a an very with of to in for on at by just").split()
POS = "great wonderful excellent lovely brilliant superb enjoyable delightful moving fun".split()
NEG = "awful terrible boring dull horrible poor bad weak tedious messy".split()

TOPICS = {
    "sports": "match team goal coach season player league score win stadium".split(),
    "tech": "software laptop chip network code device app update server battery".split(),
    "food": "recipe flavor dinner bread sauce kitchen spicy dessert chef soup".split(),
}
TOPIC_FILLER = "today the new a report says people were about this week in our city".split()


def sentence(rng, signal, filler, n_signal, length):
    words = [rng.choice(filler) for _ in range(length)]
    for _ in range(n_signal):
        words.insert(rng.randrange(len(words) + 1), rng.choice(signal))
    return " ".join(words)


def polarity(rng, n=200):
    rows = []
    for i in range(n):
        label = "positive" if i % 2 == 0 else "negative"
        signal = POS if label == "positive" else NEG
        other = NEG if label == "positive" else POS
        text = sentence(rng, signal, FILLER, rng.randint(1, 3), rng.randint(4, 14))
        if rng.random() < 0.15:
            text += " " + rng.choice(other)
        rows.append((text, label))
    rng.shuffle(rows)
    return rows


def topics(rng, n=180):
    rows = []
    names = sorted(TOPICS)
    for i in range(n):
        label = names[i % len(names)]
        text = sentence(rng, TOPICS[label], TOPIC_FILLER, rng.randint(1, 3), rng.randint(5, 16))
        rows.append((text, label))
    rng.shuffle(rows)
    return rows


def write(name, rows):
    with open(ROOT / f"{name}.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["text", "label"])
        w.writerows(rows)


if __name__ == "__main__":
    ROOT.mkdir(exist_ok=True)
    write("toy_polarity", polarity(random.Random(7)))
    write("toy_topics", topics(random.Random(11)))
