#!/usr/bin/env python3
"""Regenerates the synthetic polarity tasks under data/tasks/.

Four 2-class tasks share one polarity lexicon but use disjoint carrier
sentences and their own label words. The fourth task (fresh_outlook) is
the held-out adaptation target: same underlying skill, new phrasing.
Everything is a deterministic function of the lists below; no RNG.
"""

import json
import os

POSITIVE = ["great", "lovely", "superb", "shiny", "fresh", "warm",
            "bright", "sweet", "calm", "neat", "golden", "cheerful"]
NEGATIVE = ["awful", "broken", "rusty", "gloomy", "bitter", "cold",
            "noisy", "messy", "sour", "angry", "cracked", "dreary"]

TASKS = {
    "mood_report": {
        "labels": ("positive", "negative"),
        "carriers": [
            "the film felt {w} from start to finish",
            "that novel seemed {w} in every chapter",
            "the acting came across {w} tonight",
            "her latest album sounded {w} to the critics",
            "the plot stayed {w} until the end",
            "the soundtrack turned {w} halfway through",
            "his directing looked {w} on the big screen",
            "the script read {w} at the table",
            "the finale played out {w} for the audience",
            "the sequel arrived {w} this spring",
        ],
        "templates": [
            {
                "name": "ask_mood",
                "input_template": "review : {{sentence}} is the mood positive or negative ?",
                "target_template": "{{label}}",
                "answer_choices": ["positive", "negative"],
            },
            {
                "name": "mood_after",
                "input_template": "{{sentence}} question : was that a positive or negative mood ?",
                "target_template": "{{label}}",
                "answer_choices": ["positive", "negative"],
            },
        ],
    },
    "tone_flag": {
        "labels": ("good", "bad"),
        "carriers": [
            "the morning started {w} near the harbor",
            "our picnic turned {w} by noon",
            "the weather stayed {w} across the valley",
            "the afternoon crowd felt {w} downtown",
            "the garden looked {w} after the rain",
            "the market square sounded {w} on sunday",
            "the long drive seemed {w} through the hills",
            "the evening sky went {w} over the bay",
            "the campsite felt {w} under the pines",
            "the ferry ride stayed {w} past the lighthouse",
        ],
        "templates": [
            {
                "name": "sound_check",
                "input_template": "verdict needed : {{sentence}} does this sound good or bad ?",
                "target_template": "{{label}}",
                "answer_choices": ["good", "bad"],
            },
            {
                "name": "rate_it",
                "input_template": "{{sentence}} rate the day , good or bad .",
                "target_template": "{{label}}",
                "answer_choices": ["good", "bad"],
            },
        ],
    },
    "vibe_match": {
        "labels": ("pleasant", "unpleasant"),
        "carriers": [
            "the old kitchen appeared {w} at dawn",
            "the waiting room felt {w} this week",
            "the library corner stayed {w} most days",
            "the hotel lobby looked {w} to guests",
            "the train station turned {w} at rush hour",
            "the office hallway seemed {w} on monday",
            "the corner cafe sounded {w} last night",
            "the museum wing appeared {w} in winter",
            "the rooftop bar felt {w} before closing",
            "the subway platform went {w} after midnight",
        ],
        "templates": [
            {
                "name": "tone_of_text",
                "input_template": "text : {{sentence}} the tone of the text is pleasant or unpleasant ?",
                "target_template": "{{label}}",
                "answer_choices": ["pleasant", "unpleasant"],
            },
            {
                "name": "read_reply",
                "input_template": "how does it read ? {{sentence}} reply pleasant or unpleasant .",
                "target_template": "{{label}}",
                "answer_choices": ["pleasant", "unpleasant"],
            },
        ],
    },
    "fresh_outlook": {
        "labels": ("good", "bad"),
        "carriers": [
            "the soup tasted {w} at first sip",
            "the bakery bread smelled {w} this morning",
            "the dinner special looked {w} on the plate",
            "the coffee blend seemed {w} to regulars",
            "the roast turned out {w} for the holiday",
            "the salad bar stayed {w} through lunch",
            "the dessert tray appeared {w} behind the glass",
            "the stew simmered {w} all afternoon",
            "the breakfast menu read {w} to travelers",
            "the house wine tasted {w} with dinner",
        ],
        "templates": [
            {
                "name": "call_it",
                "input_template": "consider what follows . {{sentence}} overall call it good or bad .",
                "target_template": "{{label}}",
                "answer_choices": ["good", "bad"],
            },
            {
                "name": "outlook_is",
                "input_template": "{{sentence}} after weighing everything the outlook is good or bad ?",
                "target_template": "{{label}}",
                "answer_choices": ["bad", "good"],
            },
        ],
    },
}

# per polarity: 16 train, 4 validation, 4 test rows per task
SPLIT_SIZES = [("train", 16), ("validation", 4), ("test", 4)]


def rows_for(spec):
    """Deterministic carrier x word grid, interleaved so every split mixes
    carriers and words."""
    pos_label, neg_label = spec["labels"]
    pos, neg = [], []
    n = len(spec["carriers"])
    for j, (pw, nw) in enumerate(zip(POSITIVE, NEGATIVE)):
        for i in range(n):
            carrier = spec["carriers"][(i + j) % n]
            pos.append({"sentence": carrier.format(w=pw), "label": pos_label})
            neg.append({"sentence": carrier.format(w=nw), "label": neg_label})
    return pos, neg


def main():
    base = os.path.join(os.path.dirname(os.path.abspath(__file__)), "tasks")
    for task, spec in TASKS.items():
        outdir = os.path.join(base, task)
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "templates.json"), "w") as f:
            json.dump({"task_name": task, "templates": spec["templates"]}, f, indent=2)
            f.write("\n")
        pos, neg = rows_for(spec)
        offset = 0
        for split, per_label in SPLIT_SIZES:
            rows = []
            for k in range(per_label):
                rows.append(pos[offset + k])
                rows.append(neg[offset + k])
            offset += per_label
            with open(os.path.join(outdir, split + ".jsonl"), "w") as f:
                for r in rows:
                    f.write(json.dumps(r) + "\n")
        print(f"{task}: {sum(s for _, s in SPLIT_SIZES) * 2} rows")


if __name__ == "__main__":
    main()
