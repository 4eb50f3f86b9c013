"""File formats: MDP, policy and value documents (JSON), run configs (YAML),
reports and checkpoints (JSON).

An MDP document holds ``n_states``, ``n_actions``, ``gamma`` and the dense
``transition`` and ``reward`` arrays, either nested or flattened row-major
over ``(s, a, s')``. Rewards may also be given per ``(s, a)``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ContractError, ShapeError
from .mdp import FiniteMdp, check_policy


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ContractError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: not valid JSON ({exc})") from None


def write_json(doc, path) -> None:
    """Stable formatting so identical documents give identical bytes."""
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def mdp_from_dict(doc: dict) -> FiniteMdp:
    try:
        S, A, gamma = int(doc["n_states"]), int(doc["n_actions"]), float(doc["gamma"])
        P = np.asarray(doc["transition"], dtype=float)
        r = np.asarray(doc["reward"], dtype=float)
    except KeyError as exc:
        raise ContractError(f"MDP document is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ContractError(f"MDP document has malformed arrays ({exc})") from None
    if P.size != S * A * S:
        raise ShapeError(f"transition has {P.size} entries, expected {S * A * S}")
    P = P.reshape(S, A, S)
    if r.size == S * A * S:
        r = r.reshape(S, A, S)
    elif r.size == S * A:
        r = r.reshape(S, A)
    else:
        raise ShapeError(f"reward has {r.size} entries, expected {S * A * S} or {S * A}")
    return FiniteMdp(P, r, gamma)


def mdp_to_dict(mdp: FiniteMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.discount,
        "transition": mdp.transition.ravel().tolist(),
        "reward": mdp.reward.ravel().tolist(),
    }


def load_mdp(path) -> FiniteMdp:
    return mdp_from_dict(_read_json(path))


def save_mdp(mdp: FiniteMdp, path) -> None:
    write_json(mdp_to_dict(mdp), path)


def _table(doc, key):
    return doc[key] if isinstance(doc, dict) else doc


def load_policy(path, mdp: FiniteMdp) -> np.ndarray:
    """``{"policy": [[...], ...]}`` or a bare nested list."""
    try:
        pi = np.asarray(_table(_read_json(path), "policy"), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"{path}: malformed policy ({exc})") from None
    return check_policy(pi.reshape(mdp.n_states, mdp.n_actions) if pi.size == mdp.n_states * mdp.n_actions
                        else pi, mdp)


def load_value(path, n_states: int) -> np.ndarray:
    """``{"value": [...]}`` or a bare list."""
    try:
        v = np.asarray(_table(_read_json(path), "value"), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"{path}: malformed value vector ({exc})") from None
    if v.shape != (n_states,):
        raise ShapeError(f"value vector needs {n_states} entries, got shape {v.shape}")
    return v


def load_config(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ContractError(f"no such config file: {path}") from None
    except yaml.YAMLError as exc:
        raise ContractError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise ContractError(f"{path}: config must be a mapping")
    return doc


def save_checkpoint(agent, path) -> None:
    write_json(agent.checkpoint(), path)


def load_checkpoint(agent, path) -> None:
    agent.restore(_read_json(path))
