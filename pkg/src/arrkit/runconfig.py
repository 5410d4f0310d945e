"""Shared JSON-config plumbing for the CLI and the HTTP service.

A run config is one JSON object with optional sections:

    {
      "corpus": "...", "bank": "...", "queries": "...", "gold": "...",
      "out": "...", "concurrency": 1,
      "embedder": {"dim": 64, "normalize": true, "endpoint": null, ...},
      "draft":   {"backend": "http"|"scripted", ...},
      "reviser": {"backend": "http"|"scripted", ...},
      "pipeline": {"mode": "answer", "k": 5, "iterations": 1,
                   "token_budget": null, "instruction_template": "...",
                   "draft_suffix": "..."}
    }

Scripted endpoint sections carry "rules" ([{pattern, response}, ...])
and "default_response"; http sections carry base_url, model_name, and
the retry/timeout knobs. Unknown keys are rejected so typos fail loudly
instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from typing import Optional

from .embedder import EmbedderConfig, make_embedder
from .errors import ArrError
from .llm_gateway import (
    DEFAULT_DRAFT_SUFFIX,
    HttpChatGateway,
    ModelEndpointConfig,
    ScriptedResponder,
)
from .pipeline import PipelineConfig


def load_config_file(path: Optional[str]) -> dict:
    """Read a JSON config file; None means an empty config."""
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArrError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ArrError(f"config file {path} must hold a JSON object")
    return config


def build_embedder(config: dict):
    """Build the embedder the config's "embedder" section selects (hash default)."""
    section = config.get("embedder") or {}
    if not isinstance(section, dict):
        raise ArrError("config key 'embedder' must be an object")
    known = {
        "dim", "normalize", "endpoint", "batch_size",
        "model_name", "timeout_s", "max_retries", "backoff_s",
    }
    unknown = set(section) - known
    if unknown:
        raise ArrError(f"unknown embedder config keys: {sorted(unknown)}")
    try:
        return make_embedder(EmbedderConfig(**section))
    except (TypeError, ValueError) as exc:
        raise ArrError(f"bad embedder config: {exc}") from exc


def build_gateway(config: dict, role: str):
    """Build the chat backend for one role ("draft" or "reviser")."""
    section = config.get(role)
    if section is None:
        raise ArrError(f"config is missing the '{role}' endpoint section")
    if not isinstance(section, dict):
        raise ArrError(f"config key '{role}' must be an object")
    scripted_keys = "rules" in section or "default_response" in section
    backend = section.get("backend", "scripted" if scripted_keys else "http")
    if backend == "scripted":
        rules = []
        for i, rule in enumerate(section.get("rules", [])):
            if isinstance(rule, dict) and "pattern" in rule and "response" in rule:
                rules.append((rule["pattern"], rule["response"]))
            elif isinstance(rule, (list, tuple)) and len(rule) == 2:
                rules.append((rule[0], rule[1]))
            else:
                raise ArrError(f"'{role}' rule {i} must be {{pattern, response}}")
        return ScriptedResponder(
            rules=rules,
            default_response=section.get("default_response"),
            max_input_tokens=section.get("max_input_tokens", 8000),
        )
    if backend == "http":
        known = {
            "backend", "base_url", "model_name", "max_input_tokens", "temperature",
            "timeout_s", "max_retries", "backoff_s", "max_in_flight",
            "max_output_tokens", "api_key_env",
        }
        unknown = set(section) - known
        if unknown:
            raise ArrError(f"unknown '{role}' config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in section.items() if k != "backend"}
        if "base_url" not in kwargs or "model_name" not in kwargs:
            raise ArrError(f"'{role}' endpoint needs base_url and model_name")
        try:
            return HttpChatGateway(ModelEndpointConfig(**kwargs))
        except (TypeError, ValueError) as exc:
            raise ArrError(f"bad '{role}' config: {exc}") from exc
    raise ArrError(f"'{role}' backend must be 'http' or 'scripted', got {backend!r}")


def build_pipeline_config(
    config: dict,
    mode: Optional[str] = None,
    k: Optional[int] = None,
    iterations: Optional[int] = None,
) -> PipelineConfig:
    """PipelineConfig from the config's "pipeline" section, with overrides."""
    section = config.get("pipeline") or {}
    if not isinstance(section, dict):
        raise ArrError("config key 'pipeline' must be an object")
    defaults = PipelineConfig()
    try:
        return PipelineConfig(
            mode=mode if mode is not None else section.get("mode", defaults.mode),
            k=k if k is not None else section.get("k", defaults.k),
            iterations=iterations
            if iterations is not None
            else section.get("iterations", defaults.iterations),
            instruction_template=section.get(
                "instruction_template", defaults.instruction_template
            ),
            token_budget=section.get("token_budget"),
            draft_suffix=section.get("draft_suffix", DEFAULT_DRAFT_SUFFIX),
        )
    except ValueError as exc:
        raise ArrError(f"bad pipeline config: {exc}") from exc
