"""Regenerate the bundled fixture datasets (checked into the repo).

Usage: python scripts/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "mmcoir" / "fixtures"

DESCRIPTIONS = [
    ("bar chart of monthly revenue", "bars = plt.bar(months, revenue)\nplt.ylabel('revenue')"),
    ("scatter plot of height versus weight", "plt.scatter(height, weight, alpha=0.5)"),
    ("red circle centered in the canvas", "<svg><circle cx='50' cy='50' r='40' fill='red'/></svg>"),
    ("login form with two fields", "<form><input name='user'/><input type='password'/></form>"),
    ("pie chart of market share", "plt.pie(share, labels=vendors, autopct='%1.0f%%')"),
    ("blue rectangle with rounded corners", "<svg><rect rx='8' width='90' height='40' fill='blue'/></svg>"),
    ("line plot of temperature over time", "plt.plot(times, temps, color='tab:orange')"),
    ("navigation bar with three links", "<nav><a>Home</a><a>Docs</a><a>About</a></nav>"),
    ("histogram of response latencies", "plt.hist(latencies, bins=30)"),
    ("green triangle pointing upward", "<svg><polygon points='50,10 90,90 10,90' fill='green'/></svg>"),
    ("stacked area chart of traffic sources", "plt.stackplot(days, direct, search, social)"),
    ("sequence diagram of a login flow", "@startuml\nuser -> server : login\nserver --> user : token\n@enduml"),
    ("heatmap of correlation matrix", "plt.imshow(corr, cmap='viridis')\nplt.colorbar()"),
    ("footer with copyright text", "<footer><small>&copy; example.org</small></footer>"),
    ("activity diagram with a decision", "@startuml\nstart\nif (valid?) then (yes)\n:process;\nelse (no)\n:reject;\nendif\n@enduml"),
    ("box plot of scores by group", "plt.boxplot([a_scores, b_scores], labels=['A', 'B'])"),
    ("orange star shape", "<svg><path d='M50 5 61 39 98 39 68 60 79 95 50 73 21 95 32 60 2 39 39 39Z' fill='orange'/></svg>"),
    ("two-column responsive layout", "<div class='grid'><main>body</main><aside>nav</aside></div>"),
    ("violin plot of reaction times", "plt.violinplot(dataset=[rt_young, rt_old])"),
    ("class diagram with inheritance", "@startuml\nclass Animal\nclass Dog extends Animal\n@enduml"),
    ("donut chart of budget split", "plt.pie(budget, wedgeprops=dict(width=0.4))"),
    ("button with a hover style", "<style>.btn:hover{background:#444}</style><button class='btn'>Go</button>"),
    ("error bars on mean estimates", "plt.errorbar(x, means, yerr=sems, fmt='o')"),
    ("purple ellipse stretched wide", "<svg><ellipse cx='60' cy='40' rx='50' ry='20' fill='purple'/></svg>"),
    ("log-scale line plot of growth", "plt.semilogy(years, users)"),
]

INSTRUCTION_QT = "Please retrieve the code that matches the description."
INSTRUCTION_QI = "please retrieve the code that matches this image."
INSTRUCTION_QC = "Please retrieve the image that matches this code."


def write_images(rng: np.ndarray, n: int = 16) -> list[str]:
    out = []
    (FIXTURES / "images").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        pixels = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        name = f"images/img_{i:02d}.png"
        Image.fromarray(pixels, "RGB").save(FIXTURES / name)
        out.append(name)
    return out


def smoke_train(rng, images: list[str]) -> list[dict]:
    rows = []
    for i in range(50):
        desc, code = DESCRIPTIONS[i % len(DESCRIPTIONS)]
        variant = f"{desc} (variant {i // len(DESCRIPTIONS)})" if i >= len(DESCRIPTIONS) else desc
        neg_desc, neg_code = DESCRIPTIONS[(i + 7) % len(DESCRIPTIONS)]
        if i % 5 == 4:
            rows.append(
                {
                    "qry": f"{INSTRUCTION_QI} [image]",
                    "qry_img_path": images[i % len(images)],
                    "pos_text": code,
                    "pos_img_path": None,
                    "neg_text": neg_code,
                    "neg_img_path": None,
                }
            )
        else:
            rows.append(
                {
                    "qry": f"{INSTRUCTION_QT} {variant}",
                    "qry_img_path": None,
                    "pos_text": code,
                    "pos_img_path": None,
                    "neg_text": neg_code if i % 3 else None,
                    "neg_img_path": None,
                }
            )
    return rows


def smoke_eval(rng) -> list[dict]:
    rows = []
    for i in range(50):
        desc, code = DESCRIPTIONS[i % len(DESCRIPTIONS)]
        variant = f"{desc} shown as sample {i}" if i >= len(DESCRIPTIONS) else desc
        rows.append(
            {
                "qry_text": f"{INSTRUCTION_QT} {variant}",
                "qry_img_path": None,
                "tgt_text": f"# sample {i}\n{code}",
                "tgt_img_path": None,
            }
        )
    return rows


def smoke_eval_images(images: list[str]) -> list[dict]:
    rows = []
    for i, image in enumerate(images):
        _, code = DESCRIPTIONS[i % len(DESCRIPTIONS)]
        rows.append(
            {
                "qry_text": f"{INSTRUCTION_QI} [image]",
                "qry_img_path": image,
                "tgt_text": f"# render {i}\n{code}",
                "tgt_img_path": None,
            }
        )
    return rows


def adversarial() -> list[str]:
    ok = {
        "qry": "valid query",
        "qry_img_path": None,
        "pos_text": "code",
        "pos_img_path": None,
        "neg_text": None,
        "neg_img_path": None,
    }
    lines = []
    for i in range(5):  # [image] token without a path
        row = dict(ok, qry=f"case {i}: retrieve for [image]", qry_img_path=None)
        lines.append(json.dumps(row))
    for i in range(5):  # path without the [image] token
        row = dict(ok, qry=f"case {i + 5}: no marker", qry_img_path=f"images/img_{i:02d}.png")
        lines.append(json.dumps(row))
    for i in range(3):  # missing qry
        row = {k: v for k, v in ok.items() if k != "qry"}
        lines.append(json.dumps(row))
    for i in range(3):  # both positives missing
        lines.append(json.dumps(dict(ok, pos_text=None, pos_img_path=None)))
    lines.append(json.dumps(dict(ok, pos_text=42)))  # non-string field
    lines.append(json.dumps(dict(ok, qry=["list"])))  # non-string field
    lines.append('{"qry": "unterminated')  # invalid JSON
    lines.append(json.dumps(["not", "an", "object"]))  # non-object row
    assert len(lines) == 20
    return lines


def main():
    rng = np.random.default_rng(20240811)
    FIXTURES.mkdir(parents=True, exist_ok=True)
    images = write_images(rng)

    def dump(name: str, rows: list[dict]):
        text = "\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n"
        (FIXTURES / name).write_text(text, encoding="utf-8")

    dump("smoke_train.jsonl", smoke_train(rng, images))
    dump("smoke_eval.jsonl", smoke_eval(rng))
    dump("smoke_eval_images.jsonl", smoke_eval_images(images))
    (FIXTURES / "adversarial_train.jsonl").write_text(
        "\n".join(adversarial()) + "\n", encoding="utf-8"
    )
    (FIXTURES / "manifest.yaml").write_text(
        "- dataset: smoke\n  task: qt→rc\n  file: smoke_eval.jsonl\n"
        "- dataset: smoke-img\n  task: qi→rc\n  file: smoke_eval_images.jsonl\n",
        encoding="utf-8",
    )
    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
