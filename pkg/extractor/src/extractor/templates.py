"""Prompt templates; [CLS] is replaced by the class name."""

DEFAULT_TEMPLATES = [
    "A photo of action [CLS]",
    "A picture of action [CLS]",
    "Human action of [CLS]",
    "[CLS], an action",
    "[CLS] this is an action",
    "[CLS], a video of action",
    "Playing action of [CLS]",
    "[CLS]",
    "Playing a kind of action, [CLS]",
    "Doing a kind of action, [CLS]",
    "Look, the human is [CLS]",
    "Can you recognize the action of [CLS]?",
    "Video classification of [CLS]",
    "A video of [CLS]",
    "The man is [CLS]",
    "The woman is [CLS]",
]

PLACEHOLDER = "[CLS]"


def fill_template(template: str, class_name: str) -> str:
    if PLACEHOLDER not in template:
        raise ValueError(f"template {template!r} has no {PLACEHOLDER} placeholder")
    return template.replace(PLACEHOLDER, class_name)


def load_templates(path: str | None) -> list[str]:
    """Templates from a newline-separated file, or the defaults."""
    if path is None:
        return list(DEFAULT_TEMPLATES)
    with open(path, "r", encoding="utf-8") as fh:
        templates = [line.strip() for line in fh if line.strip()]
    if not templates:
        raise ValueError(f"template file {path} is empty")
    for template in templates:
        if PLACEHOLDER not in template:
            raise ValueError(f"template {template!r} has no {PLACEHOLDER} placeholder")
    return templates
