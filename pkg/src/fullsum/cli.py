"""Command-line entry point.

Every option can also be given in a ``--config`` file of ``key = value``
lines (dashes or underscores); flags override the file, the file overrides
built-in defaults. Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

from fullsum import __version__

log = logging.getLogger("fullsum")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s) -> list[float]:
    return [float(x) for x in str(s).replace(",", " ").split()]


class _Command:
    """Options of one subcommand with their defaults and converters."""

    def __init__(self, sub, name, help, func):
        self.p = sub.add_parser(name, help=help, description=help)
        self.p.set_defaults(_cmd=self)
        self.func = func
        self.name = name
        self.defaults: dict = {}
        self.types: dict = {}
        self.p.add_argument("--config", default=argparse.SUPPRESS, help="key = value file")
        self.opt("jobs", int, 1, "parallel workers over utterances")

    def opt(self, name, type, default, help=None, **kw):
        dest = name.replace("-", "_")
        self.defaults[dest] = default
        self.types[dest] = type
        if type is _bool and not kw:
            g = self.p.add_mutually_exclusive_group()
            g.add_argument(f"--{name}", dest=dest, action="store_true", default=argparse.SUPPRESS, help=help)
            g.add_argument(f"--no-{name}", dest=dest, action="store_false", default=argparse.SUPPRESS)
        else:
            self.p.add_argument(f"--{name}", dest=dest, type=type, default=argparse.SUPPRESS, help=help, **kw)

    def resolve(self, ns) -> dict:
        values = dict(self.defaults)
        cfg = getattr(ns, "config", None)
        if cfg:
            for key, raw in _read_config(cfg).items():
                if key not in self.types:
                    raise UsageError(f"{cfg}: unknown key {key!r} for '{self.name}'")
                try:
                    values[key] = self.types[key](raw)
                except ValueError as e:
                    raise UsageError(f"{cfg}: bad value for {key}: {e}") from None
        for key, v in vars(ns).items():
            if key in self.types:
                values[key] = v
        return values


def _read_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _require(o, *names):
    missing = [n for n in names if o.get(n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def fingerprint(values: dict) -> str:
    keep = {k: v for k, v in values.items() if k != "jobs"}
    return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()


# data loading ---------------------------------------------------------------


def load_data(directory):
    """Lexicon, utterances with features, and frame shift of a data directory
    (``inventory.txt``, ``lexicon.txt``, ``corpus.txt``, ``features/``)."""
    from fullsum.corpus import read_corpus, read_inventory, read_lexicon
    from fullsum.io import read_features

    d = Path(directory)
    phonemes = read_inventory(d / "inventory.txt")
    lexicon = read_lexicon(d / "lexicon.txt", phonemes)
    utts = read_corpus(d / "corpus.txt")
    shifts = set()
    for u in utts:
        path = d / "features" / f"{u.utt_id}.fsc"
        if path.exists():
            u.features, shift = read_features(path, with_shift=True)
            shifts.add(shift)
    if len(shifts) > 1:
        raise ValueError(f"{d}: feature files disagree on the frame shift")
    return lexicon, utts, shifts.pop() if shifts else 10.0


def _with_features(utts):
    missing = [u.utt_id for u in utts if u.features is None]
    if missing:
        raise ValueError(f"no features for {len(missing)} utterance(s), e.g. {missing[0]}")
    return utts


# subcommands ----------------------------------------------------------------


def cmd_synth(o):
    from fullsum.synthetic import generate

    _require(o, "out")
    c = generate(seed=o["seed"], num_utts=o["utts"])
    c.save(o["out"])
    frames = sum(len(u.features) for u in c.utterances)
    print(f"utterances\t{len(c.utterances)}\nframes\t{frames}")


def _train_config(o):
    from fullsum.trainer import TrainConfig

    return TrainConfig(**{f.name: o[f.name] for f in fields(TrainConfig) if f.name in o})


def cmd_train(o):
    from fullsum.trainer import save_checkpoint, train

    _require(o, "data", "out")
    cfg = _train_config(o)
    print(f"config fingerprint {cfg.fingerprint()}", file=sys.stderr)
    lexicon, utts, shift = load_data(o["data"])
    r = train(cfg, _with_features(utts), lexicon, shift, o["jobs"])
    save_checkpoint(o["out"], r, cfg)
    r.write_trace(o["trace"] or f"{o['out']}.loss.csv")
    if r.skipped:
        print(f"skipped {len(r.skipped)} utterance(s) with empty lattices", file=sys.stderr)
    print(f"epochs\t{len(r.losses) - 1}\ninitial_loss\t{r.losses[0]:.6f}\nfinal_loss\t{r.losses[-1]:.6f}")


def cmd_align(o):
    from fullsum.io import write_alignments, write_hard_alignment, write_soft_alignment
    from fullsum.trainer import align_corpus, load_checkpoint

    _require(o, "model", "data", "out")
    model, variant, space, tcfg, _ = load_checkpoint(o["model"])
    lexicon, utts, shift = load_data(o["data"])
    k = o["min_duration"] or tcfg.get("min_duration", 1)
    res = align_corpus(model, variant, _with_features(utts), lexicon, space, k, o["mode"], shift)
    if o["mode"] == "viterbi":
        write_alignments(o["out"], res)
        if o["hal_dir"]:
            Path(o["hal_dir"]).mkdir(parents=True, exist_ok=True)
            for utt, ali in res.items():
                write_hard_alignment(Path(o["hal_dir"]) / f"{utt}.hal", ali, space.size)
    else:
        out = Path(o["out"])
        out.mkdir(parents=True, exist_ok=True)
        for utt, soft in res.items():
            write_soft_alignment(out / f"{utt}.sal", soft)
    print(f"aligned\t{len(res)}")


def cmd_decode(o):
    from fullsum.decoder import NGramLm, build_decoding_graph, decode, write_hypotheses
    from fullsum.io import read_prior, read_transitions
    from fullsum.models import Scales
    from fullsum.trainer import load_checkpoint

    _require(o, "model", "data", "lm", "out")
    model, variant, space, _, _ = load_checkpoint(o["model"])
    lexicon, utts, shift = load_data(o["data"])
    lm = NGramLm.read_arpa(o["lm"])
    scales = Scales(alpha=o["alpha"], beta=o["beta"], gamma=o["gamma"], lam=o["lam"])
    prior = read_prior(o["prior"]) if o["prior"] else variant.prior
    trans = read_transitions(o["transitions"]) if o["transitions"] else variant.transitions
    graph = build_decoding_graph(lexicon, variant.topology, space, o["min_duration"])
    results = {}
    for u in _with_features(utts):
        results[u.utt_id] = decode(model.scores(u.features, shift), graph, lm, scales, prior, trans, o["beam"])
    write_hypotheses(o["out"], results)
    print(f"decoded\t{len(results)}")


def cmd_estimate(o):
    from fullsum.estimation import marginal_prior, p_approx_prior, p_approx_transitions
    from fullsum.io import write_prior, write_transitions
    from fullsum.topology import LabelSpace

    method = o["method"]
    if method == "p-approx":
        lexicon = utts = None
        if o["data"]:
            lexicon, utts, _ = load_data(o["data"])
        t = p_approx_transitions(o["mean_phoneme_ms"], o["frame_shift_ms"], utts, lexicon, o["states"])
        if o["out_transitions"]:
            write_transitions(o["out_transitions"], t)
        else:
            for k in ("speech_loop", "speech_forward", "silence_loop", "silence_forward"):
                print(f"{k} {getattr(t, k)!r}")
        if o["out_prior"]:
            if utts is None:
                raise UsageError("--out-prior needs --data")
            space = LabelSpace(lexicon.phonemes, eow=o["eow"], states=o["states"], silence=True)
            p = p_approx_prior(utts, lexicon, space, o["mean_phoneme_ms"], o["frame_shift_ms"], o["floor"])
            write_prior(o["out_prior"], p)
    elif method == "marginal-prior":
        from fullsum.trainer import load_checkpoint

        _require(o, "model", "data", "out_prior")
        model, _, space, _, _ = load_checkpoint(o["model"])
        _, utts, _ = load_data(o["data"])
        batches = (model.log_posteriors(u.features) for u in _with_features(utts))
        write_prior(o["out_prior"], marginal_prior(batches, o["floor"], tuple(space.names())))
    else:
        raise UsageError(f"unknown estimation method {method!r}")


def cmd_tse(o):
    from fullsum.evaluation import compute_tse
    from fullsum.io import read_alignments

    _require(o, "cand", "ref")
    r = compute_tse(read_alignments(o["cand"]), read_alignments(o["ref"]))
    lines = [f"tse_ms\t{r.mean_ms:.3f}", f"words\t{r.word_count}", f"skipped\t{len(r.skipped)}"]
    lines += [f"hist_{int(lo)}ms\t{c}" for lo, c in r.histogram]
    print("\n".join(lines))
    for utt in r.skipped:
        print(f"skipped utterance {utt}", file=sys.stderr)


def _read_references(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) == 3:
            try:
                float(parts[1])
                out[parts[0]] = parts[2].split()
                continue
            except ValueError:
                pass
        if len(parts) < 2:
            raise ValueError(f"{path}:{n}: expected utt-id<TAB>words")
        out[parts[0]] = parts[1].split()
    return out


def cmd_wer(o):
    from fullsum.decoder import read_hypotheses
    from fullsum.evaluation import compute_wer

    _require(o, "hyp", "ref")
    r = compute_wer(read_hypotheses(o["hyp"]), _read_references(o["ref"]))
    print(
        f"wer\t{r.wer:.2f}\nsubstitutions\t{r.substitutions}\ninsertions\t{r.insertions}\n"
        f"deletions\t{r.deletions}\nref_words\t{r.ref_words}"
    )


def cmd_plot(o):
    from fullsum.evaluation import emit_alignment_plot
    from fullsum.io import read_alignments, read_hard_alignment, read_soft_alignment

    _require(o, "out")
    soft = read_soft_alignment(o["soft"]) if o["soft"] else None
    hard = read_hard_alignment(o["hard"]) if o["hard"] else None
    ref = None
    if o["ref"]:
        _require(o, "utt")
        refs = read_alignments(o["ref"])
        if o["utt"] not in refs:
            raise ValueError(f"utterance {o['utt']!r} not in {o['ref']}")
        ref = refs[o["utt"]]
    names = None
    if o["model"]:
        from fullsum.trainer import load_checkpoint

        names = load_checkpoint(o["model"])[2].names()
    emit_alignment_plot(o["out"], soft, hard, ref, names)


def cmd_sweep(o):
    from fullsum.io import atomic_open, read_alignments
    from fullsum.trainer import scale_sweep

    _require(o, "data")
    cfg = _train_config(o)
    lexicon, utts, shift = load_data(o["data"])
    ref_path = o["ref"] or Path(o["data"]) / "reference.ali"
    ref = read_alignments(ref_path) if Path(ref_path).exists() else None
    cells = scale_sweep(
        cfg, _with_features(utts), lexicon, o["alphas"], o["betas"], o["gamma"], ref, o["tse_bar_ms"], shift, o["jobs"]
    )
    rows = ["alpha\tbeta\tgamma\tinitial_loss\tfinal_loss\ttse_ms\tconverged"]
    for c in cells:
        tse = "nan" if c.tse_ms is None else f"{c.tse_ms:.3f}"
        rows.append(
            f"{c.alpha:g}\t{c.beta:g}\t{c.gamma:g}\t{c.initial_loss:.6f}\t{c.final_loss:.6f}\t{tse}\t"
            + ("yes" if c.converged else "no")
        )
    text = "\n".join(rows) + "\n"
    if o["out"]:
        with atomic_open(o["out"], "w", encoding="utf-8") as f:
            f.write(text)
    sys.stdout.write(text)


def _train_options(c: _Command, skip=()):
    from fullsum.trainer import TrainConfig

    for f in fields(TrainConfig):
        if f.name in skip:
            continue
        d = f.default
        t = _bool if isinstance(d, bool) else float if d is None or isinstance(d, float) else type(d)
        c.opt(f.name.replace("_", "-"), t, d)


def build_parser() -> _Parser:
    p = _Parser(prog="fullsum", description="Full-sum alignment training, decoding and evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = _Command(sub, "synth", "generate the seeded synthetic corpus", cmd_synth)
    c.opt("seed", int, 0)
    c.opt("utts", int, 50)
    c.opt("out", str, None, "output directory")

    c = _Command(sub, "train", "train an acoustic model with a full-sum loss", cmd_train)
    c.opt("data", str, None, "data directory")
    c.opt("out", str, None, "checkpoint path")
    c.opt("trace", str, None, "loss trace CSV (default: <out>.loss.csv)")
    _train_options(c)

    c = _Command(sub, "align", "Viterbi or Baum-Welch alignment", cmd_align)
    c.opt("model", str, None)
    c.opt("data", str, None)
    c.opt("out", str, None, "alignment file (Viterbi) or directory (Baum-Welch)")
    c.opt("hal-dir", str, None, "also write binary hard alignments here")
    c.opt("min-duration", int, None)
    c.types["mode"] = str
    c.defaults["mode"] = "viterbi"
    g = c.p.add_mutually_exclusive_group()
    g.add_argument("--viterbi", dest="mode", action="store_const", const="viterbi", default=argparse.SUPPRESS)
    g.add_argument("--baum-welch", dest="mode", action="store_const", const="baum-welch", default=argparse.SUPPRESS)

    c = _Command(sub, "decode", "decode word sequences", cmd_decode)
    for name in ("model", "data", "lm", "out", "prior", "transitions"):
        c.opt(name, str, None)
    c.opt("alpha", float, 0.0)
    c.opt("beta", float, 0.0)
    c.opt("gamma", float, 1.0)
    c.opt("lam", float, 1.0, "LM scale")
    c.opt("beam", float, math.inf)
    c.opt("min-duration", int, 1)

    c = _Command(sub, "estimate", "P-approx or marginal prior estimation", cmd_estimate)
    c.p.add_argument("method", choices=["p-approx", "marginal-prior"])
    c.types["method"] = str
    c.defaults["method"] = None
    c.opt("mean-phoneme-ms", float, 80.0)
    c.opt("frame-shift-ms", float, 10.0)
    c.opt("states", int, 1)
    c.opt("eow", _bool, False)
    c.opt("floor", float, 1e-4)
    for name in ("data", "model", "out-transitions", "out-prior"):
        c.opt(name, str, None)

    c = _Command(sub, "tse", "time-stamp error of word boundaries", cmd_tse)
    c.opt("cand", str, None)
    c.opt("ref", str, None)

    c = _Command(sub, "wer", "word error rate", cmd_wer)
    c.opt("hyp", str, None)
    c.opt("ref", str, None, "reference corpus or utt<TAB>words file")

    c = _Command(sub, "plot", "SVG alignment plot", cmd_plot)
    for name in ("soft", "hard", "ref", "utt", "model", "out"):
        c.opt(name, str, None)

    c = _Command(sub, "sweep", "train over an alpha x beta scale grid", cmd_sweep)
    c.opt("data", str, None)
    c.opt("ref", str, None, "reference alignment (default: <data>/reference.ali)")
    c.opt("out", str, None)
    c.opt("alphas", _floats, [1.0, 0.5, 0.3, 0.1])
    c.opt("betas", _floats, [1.0, 0.1, 0.3, 0.01])
    c.opt("tse-bar-ms", float, 20.0)
    _train_options(c, skip=("alpha", "beta"))
    c.defaults["variant"] = "h-hmm"
    c.defaults["gamma"] = 1.0
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cmd = ns._cmd
        values = cmd.resolve(ns)
        print(f"fingerprint {fingerprint({'command': cmd.name, **values})}", file=sys.stderr)
        cmd.func(values)
        return 0
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())

if __name__ == "__main__":
    main()
