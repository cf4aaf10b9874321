"""Builds data/qualification_key.json from the phrase tables below.

Offsets are Python string indices, which count code points and so match the
character offsets used everywhere else.
"""

import json
from pathlib import Path

EXERCISES = [
    ("Write about your family.", "She have three brothers and one sister.", "have", "Grammar_Usage"),
    ("Describe a recipe you like.", "The recipe calls for flour and sugar. The weather in Paris was mild that week.",
     "The weather in Paris was mild that week", "Off_Prompt"),
    ("Describe a local museum.", "The museum opened in 1990. It has been open ever since the museum opened in 1990.",
     "since the museum opened in 1990", "Redundant"),
    ("Describe a friend.", "Tom is an only child. His younger brother plays soccer on Sundays.",
     "His younger brother", "Self_Contradiction"),
    ("Summarize a meeting.", "The committee met on Tuesday. Purple ideas sleep under the loud window of tomorrow.",
     "Purple ideas sleep under the loud window of tomorrow", "Incoherent"),
    ("Describe a trip to the market.", "She bought four apples and three pears, so she had nine pieces of fruit.",
     "nine", "Bad_Math"),
    ("Describe a famous landmark.", "The Eiffel Tower is located in Rome and draws many visitors.",
     "Rome", "Encyclopedic"),
    ("Describe a rainy day.", "He dried his wet clothes by putting them in the freezer overnight.",
     "in the freezer", "Commonsense"),
    ("Describe a chess player.", "Lena Varga, who won the 2011 regional rapid chess title, lives in a small town.",
     "who won the 2011 regional rapid chess title", "Needs_Google"),
    ("Describe a software fix.", "The patch removes a race in the MPMC queue when two threads retry at once.",
     "MPMC", "Technical_Jargon"),
]

MCQ = [
    ("A sentence repeats a fact stated two sentences earlier. Which type fits best?",
     ["Off_Prompt", "Redundant", "Incoherent", "Encyclopedic"], "b"),
    ("Which types may link an antecedent?",
     ["Redundant and Self_Contradiction", "Incoherent and Bad_Math", "Off_Prompt only", "All types"], "a"),
    ("A wrong capital city is stated as fact. Which type fits best?",
     ["Commonsense", "Needs_Google", "Encyclopedic", "Grammar_Usage"], "c"),
    ("How large should a marked span be?",
     ["The whole sentence", "The smallest span that contains the error", "Exactly one word", "The whole paragraph"], "b"),
    ("Which severity describes an error that makes the text hard to understand?",
     ["1", "2", "3", "Severity does not apply"], "c"),
    ("A claim is plausible but you would have to search the web to verify it. Which type fits?",
     ["Encyclopedic", "Needs_Google", "Technical_Jargon", "Off_Prompt"], "b"),
    ("The text drifts to a topic unrelated to the prompt. Which type fits?",
     ["Off_Prompt", "Incoherent", "Redundant", "Commonsense"], "a"),
    ("What must every marked span include?",
     ["A severity and an explanation", "Only a type", "An antecedent", "A confidence score"], "a"),
    ("Two and two is written as five. Which type fits?",
     ["Commonsense", "Self_Contradiction", "Bad_Math", "Grammar_Usage"], "c"),
    ("Words with a specialized meaning that a general reader may not know are:",
     ["Grammar_Usage", "Incoherent", "Encyclopedic", "Technical_Jargon"], "d"),
]

REAL_PROMPT = "A new library opened in the town center."
REAL_TEXT = (
    "The new library opened on Monday in the town center. It has more than 20,000 books, "
    "and its shelves hold over 20,000 books. The library was built in 1875, so it is a brand "
    "new building. Visitors can borrow five books, and with three more they can borrow eight "
    "books in total, which is ten. Librarians said that the carrots grow quickly in the rain. "
    "The building is powered entirely by the Moon. Their children enjoys the reading room on "
    "the second floor. The mayor, who studied the succession of Habsburg archdukes in Vienna, "
    "cut the ribbon."
)
REAL_SPANS = [
    ("and its shelves hold over 20,000 books", "Redundant"),
    ("so it is a brand new building", "Self_Contradiction"),
    ("which is ten", "Bad_Math"),
    ("the carrots grow quickly in the rain", "Off_Prompt"),
    ("powered entirely by the Moon", "Commonsense"),
    ("enjoys", "Grammar_Usage"),
    ("who studied the succession of Habsburg archdukes in Vienna", "Needs_Google"),
]


def locate(text, phrase):
    start = text.find(phrase)
    assert start >= 0 and text.find(phrase, start + 1) < 0, phrase
    return start, start + len(phrase)


def main():
    exercises = []
    for prompt, text, phrase, kind in EXERCISES:
        start, end = locate(text, phrase)
        exercises.append({"prompt": prompt, "text": text, "start": start, "end": end, "error_type": kind})
    mcq = [{"question": q, "choices": c, "answer": a} for q, c, a in MCQ]
    spans = []
    for phrase, kind in REAL_SPANS:
        start, end = locate(REAL_TEXT, phrase)
        spans.append({"start": start, "end": end, "error_type": kind})
    key = {
        "version": 1,
        "exercises": exercises,
        "mcq": mcq,
        "real_task": {
            "generation_id": "qualification-real-task",
            "prompt": REAL_PROMPT,
            "text": REAL_TEXT,
            "spans": spans,
        },
    }
    out = Path(__file__).resolve().parent.parent / "data" / "qualification_key.json"
    out.write_text(json.dumps(key, indent=2, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
