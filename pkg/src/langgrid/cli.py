"""Command-line entry point.

Subcommands: train-sen, train-lcn, eval, solve, verify-theorem,
export-embeddings, gen-task. Every run writes manifest.json (the resolved
config, seed, and content hashes of emitted checkpoints) and results.csv
into --out. Exit codes: 0 ok, 1 config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, load_config
from .equivalence import random_family, verify_equivalence
from .executor import SenConfig, SenPolicy, train_sen
from .gridworld import abstract_obs, new_task, render
from .language import default_vocabulary
from .selector import LcnConfig, LcnPolicy, train_lcn


def _sen_config(cfg: dict, seed: int) -> SenConfig:
    s = cfg["sen"]
    t = cfg["task"]
    return SenConfig(
        workers=s["workers"], iterations=s["iterations"], t_max=s["t_max"],
        gamma=s["gamma"], lr=s["lr"], entropy_coef=s["entropy_coef"],
        eval_every=s["eval_every"], eval_episodes=s["eval_episodes"],
        stop_success=s["stop_success"], seed=seed,
        max_episode_steps=s["max_episode_steps"],
        distractor_lo=t["distractors_min"], distractor_hi=t["distractors_max"],
        locked_goal_prob=s["locked_goal_prob"],
        start_carried_prob=s["start_carried_prob"],
    )


def _lcn_config(cfg: dict, seed: int) -> LcnConfig:
    l = cfg["lcn"]
    t = cfg["task"]
    return LcnConfig(
        capacity=l["capacity"], batch_size=l["batch_size"], gamma=l["gamma"],
        lr=l["lr"], eps_start=l["eps_start"], eps_end=l["eps_end"],
        eps_decay_frac=l["eps_decay_frac"], target_sync=l["target_sync"],
        err_rate=l["err_rate"], option_max_steps=l["option_max_steps"],
        max_episodes=l["max_episodes"], fuzzy_frac=l["fuzzy_frac"], seed=seed,
        distractor_lo=t["distractors_min"], distractor_hi=t["distractors_max"],
    )


def cmd_train_sen(cfg, seed, out: Path) -> int:
    config = _sen_config(cfg, seed)
    rows = []

    def log(row):
        flat = {"iteration": row["iteration"], "mean_return": f"{row['mean_return']:.4f}",
                "grad_norm": f"{row['grad_norm']:.4f}", "success": f"{row['success']:.4f}"}
        for i, v in enumerate(row["per_goal"]):
            flat[f"goal_{i}"] = f"{v:.3f}"
        rows.append(flat)
        print(f"iter {row['iteration']}: return {row['mean_return']:.3f} "
              f"success {row['success']:.3f}")

    policy, _ = train_sen(config, log=log)
    ckpt = out / "sen.ckpt"
    policy.save(ckpt)
    harness.write_results_csv(out, rows)
    harness.write_manifest(out, "train-sen", cfg, seed, [ckpt])
    return 0


def cmd_train_lcn(cfg, seed, out: Path) -> int:
    config = _lcn_config(cfg, seed)
    executor = cfg["lcn"]["executor"]
    if executor != "oracle":
        if not Path(executor).exists():
            raise ConfigError(f"executor checkpoint not found: {executor}")
        executor = SenPolicy.load(executor)
    rows = []

    def log(row):
        rows.append({k: (f"{v:.4f}" if isinstance(v, float) else v)
                     for k, v in row.items()})
        print(f"episode {row['episode']}: s_r {row['s_r']:.3f} "
              f"(exact {row['s_r_exact']:.3f} fuzzy {row['s_r_fuzzy']:.3f}) "
              f"eps {row['epsilon']:.3f}")

    result = train_lcn(config, executor, log=log)
    ckpt = out / "lcn.ckpt"
    result.policy.save(ckpt)
    vocab_path = out / "vocab.txt"
    result.policy.vocab.save(vocab_path)
    harness.write_results_csv(out, rows)
    harness.write_manifest(out, "train-lcn", cfg, seed, [ckpt, vocab_path])
    print("converged" if result.converged
          else f"episode budget exhausted at s_r {result.s_r:.3f}")
    return 0


def _load_policies(cfg_eval) -> tuple:
    sen = None
    lcn = None
    if cfg_eval["sen_checkpoint"]:
        p = Path(cfg_eval["sen_checkpoint"])
        if not p.exists():
            raise ConfigError(f"sen checkpoint not found: {p}")
        sen = SenPolicy.load(p)
    if cfg_eval["lcn_checkpoint"]:
        p = Path(cfg_eval["lcn_checkpoint"])
        if not p.exists():
            raise ConfigError(f"lcn checkpoint not found: {p}")
        lcn = LcnPolicy.load(p)
    return sen, lcn


def cmd_eval(cfg, seed, out: Path) -> int:
    e = cfg["eval"]
    bundle = e["bundle"]
    spec = harness.spec_from_config(cfg["task"])
    sen, lcn = _load_policies(e)
    if bundle in ("hier", "flat") and sen is None:
        raise ConfigError(f"bundle {bundle!r} needs eval.sen_checkpoint")
    if bundle == "hier" and spec.instruction_provided and lcn is None:
        raise ConfigError("hier bundle on instruction tasks needs eval.lcn_checkpoint")
    report = harness.evaluate(bundle, spec, e["episodes"], seed, sen=sen, lcn=lcn,
                              option_max_steps=e["option_max_steps"],
                              explore_budget=e["explore_budget"])
    row = {
        "family": report.family, "bundle": report.bundle,
        "episodes": report.episodes, "successes": report.successes,
        "success_pct": f"{report.success_pct:.4f}",
        "success_display": report.display_pct,
        "std_pct": f"{report.std_pct:.4f}",
        "mean_high_steps": f"{report.mean_high_steps:.2f}",
        "mean_low_steps": f"{report.mean_low_steps:.2f}",
    }
    harness.write_results_csv(out, [row])
    harness.write_manifest(out, "eval", cfg, seed)
    print(f"{report.bundle} on {report.family}: {report.display_pct}% "
          f"({report.successes}/{report.episodes}), std {report.std_pct:.1f}")
    return 0


def cmd_solve(cfg, seed, out: Path) -> int:
    s = cfg["solve"]
    spec = harness.spec_from_config(cfg["task"])
    sen = "oracle"
    if s["sen_checkpoint"]:
        p = Path(s["sen_checkpoint"])
        if not p.exists():
            raise ConfigError(f"sen checkpoint not found: {p}")
        sen = SenPolicy.load(p)
    memory_path = out / s["memory_file"]
    buffer = None
    if memory_path.exists():
        from .memory import MemoryBuffer
        buffer = MemoryBuffer.load(memory_path)
    outcome, buffer = harness.solve_with_memory(
        spec, sen, memory_buffer=buffer, budget=s["budget"], episodes=s["episodes"],
        seed=seed, option_max_steps=s["option_max_steps"])
    buffer.save(memory_path)
    rows = []
    for label, rep in (("explore", outcome.pre), ("replay", outcome.post),
                       ("aggregate", outcome.aggregate)):
        if rep is None:
            continue
        rows.append({
            "phase": label, "family": rep.family, "episodes": rep.episodes,
            "successes": rep.successes, "success_pct": f"{rep.success_pct:.4f}",
            "success_display": harness.format_pct(rep.success_pct),
            "std_pct": f"{rep.std_pct:.4f}",
            "mean_high_steps": f"{rep.mean_high_steps:.2f}",
            "mean_low_steps": f"{rep.mean_low_steps:.2f}",
        })
        print(f"{label}: {rep.successes}/{rep.episodes} "
              f"({harness.format_pct(rep.success_pct)}%)")
    harness.write_results_csv(out, rows)
    harness.write_manifest(out, "solve", cfg, seed, [memory_path])
    return 0


def cmd_verify_theorem(cfg, seed, out: Path) -> int:
    t = cfg["theorem"]
    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    for i in range(t["families"]):
        k = int(rng.integers(1, t["max_elements"] + 1))
        family = random_family(rng, k)
        res = verify_equivalence(family, t["samples"], rng)
        worst = max(worst, res.abs_diff)
        rows.append({
            "family": i, "k": k,
            "j_enumerated": f"{res.j_enumerated:.15f}",
            "j_closed_form": f"{res.j_closed_form:.15f}",
            "abs_diff": f"{res.abs_diff:.3e}",
            "mc_estimate": f"{res.mc_estimate:.6f}",
            "mc_stderr": f"{res.mc_stderr:.6f}",
        })
    harness.write_results_csv(out, rows)
    harness.write_manifest(out, "verify-theorem", cfg, seed)
    last = rows[-1]
    print(f"{t['families']} families: J_enum {last['j_enumerated']} "
          f"J_closed {last['j_closed_form']} worst |diff| {worst:.3e}")
    return 0


def cmd_export_embeddings(cfg, seed, out: Path) -> int:
    e = cfg["export"]
    if not e["checkpoint"]:
        raise ConfigError("export.checkpoint is required")
    p = Path(e["checkpoint"])
    if not p.exists():
        raise ConfigError(f"checkpoint not found: {p}")
    if e["kind"] == "lcn":
        policy = LcnPolicy.load(p)
    elif e["kind"] == "sen":
        policy = SenPolicy.load(p)
    else:
        raise ConfigError(f"export.kind must be lcn or sen, got {e['kind']!r}")
    csv_path = out / "embeddings.csv"
    n = harness.export_embeddings(policy, csv_path, kind=e["kind"])
    harness.write_results_csv(out, [{"rows": n, "file": csv_path.name}])
    harness.write_manifest(out, "export-embeddings", cfg, seed, [csv_path])
    print(f"wrote {n} probe rows to {csv_path}")
    return 0


def cmd_gen_task(cfg, seed, out: Path) -> int:
    spec = harness.spec_from_config(cfg["task"])
    world, instruction = new_task(spec, seed)
    text = render(world)
    if instruction:
        text += f"\ninstruction: {' '.join(instruction)}"
    counts = abstract_obs(world)
    text += "\nabstract counts: " + " ".join(str(c) for c in counts)
    print(text)
    (out / "task.txt").write_text(text + "\n", encoding="utf-8")
    harness.write_results_csv(out, [{"family": cfg["task"]["family"], "seed": seed}])
    harness.write_manifest(out, "gen-task", cfg, seed)
    return 0


COMMANDS = {
    "train-sen": cmd_train_sen,
    "train-lcn": cmd_train_lcn,
    "eval": cmd_eval,
    "solve": cmd_solve,
    "verify-theorem": cmd_verify_theorem,
    "export-embeddings": cmd_export_embeddings,
    "gen-task": cmd_gen_task,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="langgrid")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default="default",
                       help="config file path, or 'default'")
        p.add_argument("--seed", type=int, default=None,
                       help="overrides [run] seed")
        p.add_argument("--out", default="out", help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg["run"]["seed"]
        cfg["run"]["seed"] = seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, seed, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
