"""Structured extraction prompts and the expert system prompt profile.

Templates carry three ordered blocks (role, requirements, output format) and
use ``{NAME}`` placeholders with uppercase names; literal braces are escaped
as ``{{`` / ``}}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .corpus import TextSegment
from .errors import MateriaError

PLACEHOLDER_RE = re.compile(r"\{([A-Z][A-Z0-9_]*)\}")

SEGMENT_PLACEHOLDER = "SEGMENT_TEXT"


class MissingPlaceholderError(MateriaError):
    """A block references a placeholder the template does not declare."""


class UnsubstitutedPlaceholderError(MateriaError):
    """Rendering finished with a declared placeholder left unfilled."""


@dataclass(frozen=True)
class Issue:
    invariant: str
    location: str
    message: str


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    role_block: str
    requirements_block: str
    format_block: str
    placeholders: frozenset[str] = field(default_factory=frozenset)

    def blocks(self) -> tuple[tuple[str, str], ...]:
        return (
            ("role_block", self.role_block),
            ("requirements_block", self.requirements_block),
            ("format_block", self.format_block),
        )


@dataclass(frozen=True)
class EnhancedPromptProfile:
    profile_id: str
    expert_role: str
    answer_structure: tuple[str, ...]
    boundary_conditions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.answer_structure:
            raise ValueError("answer_structure must be non-empty")
        if "conclusion" not in self.answer_structure[-1].lower():
            raise ValueError("the last answer_structure step must be a conclusion step")


def referenced_placeholders(text: str) -> set[str]:
    """Placeholder names referenced in text, ignoring escaped braces."""
    names: set[str] = set()
    i = 0
    while i < len(text):
        if text[i] == "{":
            if text.startswith("{{", i):
                i += 2
                continue
            match = PLACEHOLDER_RE.match(text, i)
            if match:
                names.add(match.group(1))
                i = match.end()
                continue
        elif text.startswith("}}", i):
            i += 2
            continue
        i += 1
    return names


def _substitute(text: str, values: Mapping[str, str], declared: frozenset[str]) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "{":
            if text.startswith("{{", i):
                out.append("{")
                i += 2
                continue
            match = PLACEHOLDER_RE.match(text, i)
            if match:
                name = match.group(1)
                if name not in declared:
                    raise MissingPlaceholderError(
                        f"placeholder {{{name}}} is referenced but not declared"
                    )
                if name not in values:
                    raise UnsubstitutedPlaceholderError(
                        f"no value provided for placeholder {{{name}}}"
                    )
                out.append(values[name])
                i = match.end()
                continue
            out.append(ch)
            i += 1
            continue
        if text.startswith("}}", i):
            out.append("}")
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def validate_template(template: PromptTemplate) -> list[Issue]:
    """Report every violated template invariant; an empty list means valid."""
    issues: list[Issue] = []
    declared = set(template.placeholders)
    referenced: set[str] = set()
    for name, text in template.blocks():
        refs = referenced_placeholders(text)
        referenced |= refs
        for ref in sorted(refs - declared):
            issues.append(
                Issue(
                    invariant="placeholders-declared",
                    location=name,
                    message=f"block references undeclared placeholder {{{ref}}}",
                )
            )
    for unused in sorted(declared - referenced):
        issues.append(
            Issue(
                invariant="placeholders-referenced",
                location="placeholders",
                message=f"declared placeholder {{{unused}}} is never referenced",
            )
        )
    if not template.format_block.strip():
        issues.append(
            Issue(
                invariant="format-grammar",
                location="format_block",
                message="format_block is empty; output grammar is unparseable",
            )
        )
    return issues


def render_extraction_prompt(
    template: PromptTemplate,
    segment: TextSegment,
    extra: Mapping[str, str] | None = None,
) -> str:
    """Render role, requirements, and format blocks in order for one segment."""
    if not segment.text:
        raise ValueError("segment text must be non-empty")
    values = {SEGMENT_PLACEHOLDER: segment.text}
    if extra:
        values.update(extra)
    parts = [
        _substitute(text, values, template.placeholders) for _, text in template.blocks()
    ]
    return "\n\n".join(parts)


def render_enhanced_system_prompt(profile: EnhancedPromptProfile) -> str:
    """Render the expert role, the numbered answer steps, then the prohibitions."""
    lines = [profile.expert_role, "", "Structure every answer as follows:"]
    for i, step in enumerate(profile.answer_structure, 1):
        lines.append(f"{i}. {step}")
    if profile.boundary_conditions:
        lines.append("")
        lines.append("Strict constraints:")
        for condition in profile.boundary_conditions:
            lines.append(f"- {condition}")
    return "\n".join(lines)


def template_to_dict(template: PromptTemplate) -> dict:
    return {
        "template_id": template.template_id,
        "role_block": template.role_block,
        "requirements_block": template.requirements_block,
        "format_block": template.format_block,
        "placeholders": sorted(template.placeholders),
    }


def template_from_dict(obj: Mapping) -> PromptTemplate:
    return PromptTemplate(
        template_id=obj["template_id"],
        role_block=obj["role_block"],
        requirements_block=obj["requirements_block"],
        format_block=obj["format_block"],
        placeholders=frozenset(obj.get("placeholders", ())),
    )


def profile_from_dict(obj: Mapping) -> EnhancedPromptProfile:
    return EnhancedPromptProfile(
        profile_id=obj["profile_id"],
        expert_role=obj["expert_role"],
        answer_structure=tuple(obj["answer_structure"]),
        boundary_conditions=tuple(obj.get("boundary_conditions", ())),
    )


def save_template(template: PromptTemplate, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(template_to_dict(template), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_template(path: str | Path) -> PromptTemplate:
    return template_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_profile(path: str | Path) -> EnhancedPromptProfile:
    return profile_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _builtin_json(name: str) -> dict:
    data = resources.files("materia").joinpath(f"data/templates/{name}")
    return json.loads(data.read_text(encoding="utf-8"))


def builtin_template(template_id: str = "extraction-default") -> PromptTemplate:
    return template_from_dict(_builtin_json(f"{template_id}.json"))


def builtin_profile(profile_id: str = "enhanced-system-default") -> EnhancedPromptProfile:
    return profile_from_dict(_builtin_json(f"{profile_id}.json"))


def scan_template_dir(directory: str | Path) -> list[tuple[Path, list[Issue]]]:
    """Validate every JSON template/profile file in a directory.

    Files with a ``role_block`` key are templates; files with an
    ``expert_role`` key are system-prompt profiles. Returns per-file issues.
    """
    results: list[tuple[Path, list[Issue]]] = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            results.append(
                (path, [Issue("well-formed-json", str(path), f"unreadable template: {exc}")])
            )
            continue
        if "role_block" in obj:
            try:
                results.append((path, validate_template(template_from_dict(obj))))
            except KeyError as exc:
                results.append(
                    (path, [Issue("template-fields", str(path), f"missing field {exc}")])
                )
        elif "expert_role" in obj:
            try:
                profile_from_dict(obj)
                results.append((path, []))
            except (KeyError, ValueError) as exc:
                results.append((path, [Issue("profile-fields", str(path), str(exc))]))
        else:
            results.append(
                (
                    path,
                    [
                        Issue(
                            "template-fields",
                            str(path),
                            "file is neither a template (role_block) nor a profile (expert_role)",
                        )
                    ],
                )
            )
    return results
