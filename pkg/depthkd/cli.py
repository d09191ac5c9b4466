#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd.cli
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This is the command-line interface.  An output root holds everything an
experiment produces::

    <out>/data/target_train, <out>/data/target_test, <out>/data/ood,
    <out>/data/gap/t<t>
    <out>/runs/<method>[-<label>]-seed<seed>/{run.json, curves.csv, ckpt/}
    <out>/reports/<name>/

Exit codes: 0 on success, 2 for configuration errors, 1 for anything else
that goes wrong.
"""
import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Sequence, Tuple
import numpy as np
import torch
from . import __version__
from .config import ExperimentConfig, load_config
from .distiller import CKPT_DIR, TrainConfig, as_arrays, invert_dataset, \
    load_checkpoint, run_datafree_distillation, run_kd_data_aware, \
    run_kd_ood, run_random_noise_kd, train_supervised
from .errors import CheckpointError, ConfigError, DepthKDError
from .evalkit import attack_probe, attack_then_distill, histogram_analysis, \
    load_record, make_report, plot_histograms
from .flags import AblationFlags, Method
from .mixer import dump_mix, mix_batch
from .nets import evaluating, forward_transform
from .simworld import Sample, blend_domains, generate_dataset, load_manifest


EXIT_OK = 0  #: success
EXIT_FAILURE = 1  #: something went wrong at runtime
EXIT_CONFIG = 2  #: the configuration (or the command line) is invalid

#: the ablation matrix: labels and the enhancements each keeps
ABLATIONS = (
    ('none', AblationFlags.NONE),
    ('mixing', AblationFlags.USE_MIXING),
    ('g', AblationFlags.USE_G | AblationFlags.USE_REC),
    ('no_rec', AblationFlags.USE_G | AblationFlags.USE_MIXING),
    ('full', AblationFlags.DEFAULT),
    ('g_raw', AblationFlags.DEFAULT | AblationFlags.TRANSFORM_RAW_BRANCH)
)


def data_dir(cfg: ExperimentConfig, name: str) -> Path:
    """
    Get the directory of one of the experiment's datasets.

    :param cfg: the experiment configuration
    :param name: 'target_train', 'target_test' or 'ood'
    :return: the directory
    """
    return cfg.output_root / 'data' / name


def run_dir(cfg: ExperimentConfig,
            method: Method,
            seed: int,
            label: str = None) -> Path:
    """
    Get the directory of a run.

    :param cfg: the experiment configuration
    :param method: the method
    :param seed: the run's seed
    :param label: distinguishes runs of one method
    :return: the directory
    """
    label = f'-{label}' if label else ''
    return cfg.output_root / 'runs' / f'{method.value}{label}-seed{seed}'


def teacher_checkpoint(cfg: ExperimentConfig) -> Path:
    """
    Get the checkpoint of the teacher students distill from.

    :param cfg: the experiment configuration
    :return: the checkpoint path
    :raises depthkd.errors.CheckpointError: if the teacher hasn't been trained
    """
    path = run_dir(
        cfg, Method.TEACHER_SUPERVISED, cfg.teacher_seed
    ) / 'ckpt' / 'teacher.pt'
    if not path.exists():
        raise CheckpointError(
            f'There is no teacher checkpoint at {path}; run '
            f'`depthkd run --method teacher_supervised` first.'
        )
    return path


def load_teacher(cfg: ExperimentConfig):
    """
    Load the teacher students distill from.

    :param cfg: the experiment configuration
    :return: the teacher
    :raises depthkd.errors.CheckpointError: if the teacher hasn't been trained
        or doesn't match the configured teacher
    """
    teacher, _ = load_checkpoint(teacher_checkpoint(cfg), cfg.teacher_spec)
    return teacher


def train_config(cfg: ExperimentConfig,
                 seed: int = None,
                 flags: AblationFlags = None) -> TrainConfig:
    """
    Get the training configuration with a different seed or ablation flags.

    :param cfg: the experiment configuration
    :param seed: the seed (the configured seed if `None`)
    :param flags: the ablation flags (the configured flags if `None`)
    :return: the training configuration
    """
    values = cfg.train.to_dict()
    if seed is not None:
        values['seed'] = seed
    if flags is not None:
        values['ablation_flags'] = flags
    train = TrainConfig.from_dict(values)
    train.validate()
    return train


def cmd_gen(cfg: ExperimentConfig, workers: int = 1) -> List[Path]:
    """
    Generate the target training and test sets and the OOD set.  The test set
    continues the target domain's seeds after the training set.

    :param cfg: the experiment configuration
    :param workers: the number of generating processes
    :return: the dataset directories
    """
    test_domain = type(cfg.domain_a).from_dict({
        **cfg.domain_a.to_dict(),
        'seed_namespace': cfg.domain_a.seed_namespace + cfg.sizes.train_a
    })
    jobs = (
        ('target_train', cfg.domain_a, cfg.sizes.train_a),
        ('target_test', test_domain, cfg.sizes.test_a),
        ('ood', cfg.domain_b, cfg.sizes.ood)
    )
    dirs = []
    for name, domain, count in jobs:
        generate_dataset(domain, count, data_dir(cfg, name), workers=workers)
        dirs.append(data_dir(cfg, name))
    return dirs


def cmd_run(cfg: ExperimentConfig,
            method: Method,
            seed: int = None) -> Path:
    """
    Run one method end to end and evaluate it on the target test set.

    :param cfg: the experiment configuration
    :param method: the method
    :param seed: the seed (by default the configured one; the teacher seed for
        the teacher)
    :return: the run directory
    """
    if seed is None:
        seed = (
            cfg.teacher_seed if method == Method.TEACHER_SUPERVISED
            else cfg.train.seed
        )
    train = train_config(cfg, seed)
    out_dir = run_dir(cfg, method, seed)
    test = load_manifest(data_dir(cfg, 'target_test'))
    if method in (Method.TEACHER_SUPERVISED, Method.STUDENT_SUPERVISED):
        spec = (
            cfg.teacher_spec if method == Method.TEACHER_SUPERVISED
            else cfg.student_spec
        )
        train_supervised(load_manifest(data_dir(cfg, 'target_train')),
                         train, spec, method, test=test, out_dir=out_dir)
        return out_dir
    teacher = teacher_checkpoint(cfg)
    if method == Method.KD_DATA_AWARE:
        run_kd_data_aware(teacher, load_manifest(data_dir(cfg, 'target_train')),
                          train, cfg.student_spec, test=test, out_dir=out_dir,
                          teacher_spec=cfg.teacher_spec)
    elif method == Method.KD_OOD:
        run_kd_ood(teacher, load_manifest(data_dir(cfg, 'ood')), train,
                   cfg.student_spec, test=test, out_dir=out_dir,
                   teacher_spec=cfg.teacher_spec)
    elif method == Method.RANDOM_NOISE_KD:
        run_random_noise_kd(teacher, train, cfg.student_spec,
                            num_samples=cfg.sizes.ood, test=test,
                            out_dir=out_dir, teacher_spec=cfg.teacher_spec)
    else:
        run_datafree_distillation(
            teacher, load_manifest(data_dir(cfg, 'ood')), train,
            cfg.student_spec, cfg.transform_spec, test=test, out_dir=out_dir,
            teacher_spec=cfg.teacher_spec
        )
    return out_dir


def cmd_report(run_dirs: Sequence[Path or str], out_dir: Path) -> List[Path]:
    """
    Write a report of finished runs.

    :param run_dirs: the run directories
    :param out_dir: the report directory
    :return: the report files
    """
    return make_report([load_record(d) for d in run_dirs], out_dir)


def cmd_attack(cfg: ExperimentConfig, seed: int = None) -> List[Path]:
    """
    Probe the teacher with IFGSM and distill students on attacked OOD images,
    one per perturbation bound.

    :param cfg: the experiment configuration
    :param seed: the seed
    :return: the report files
    """
    train = train_config(cfg, seed)
    teacher = load_teacher(cfg)
    ood = as_arrays(load_manifest(data_dir(cfg, 'ood')))
    epsilons = [e / 255.0 for e in cfg.evaluation.epsilons_255]
    steps = cfg.evaluation.ifgsm_steps
    records = attack_then_distill(
        teacher, ood, epsilons, train, cfg.student_spec,
        test=load_manifest(data_dir(cfg, 'target_test')),
        out_root=cfg.output_root / 'runs',
        steps=steps, batch_size=cfg.evaluation.batch_size
    )
    drift = attack_probe(teacher, ood.rgb[:cfg.evaluation.batch_size],
                         epsilons, steps, cfg.evaluation.batch_size,
                         train.seed)
    for record, value in zip(records, drift):
        record.extras['teacher_drift'] = value
        record.save(run_dir(cfg, record.method, record.seed, record.label))
    return make_report(
        records, cfg.output_root / 'reports' / f'attack-seed{train.seed}'
    )


def _ablation(args: Tuple[ExperimentConfig, str, AblationFlags, int]) -> Path:
    cfg, label, flags, seed = args
    out_dir = run_dir(cfg, Method.DATAFREE_FULL, seed, label)
    run_datafree_distillation(
        teacher_checkpoint(cfg), load_manifest(data_dir(cfg, 'ood')),
        train_config(cfg, seed, flags), cfg.student_spec,
        cfg.transform_spec,
        test=load_manifest(data_dir(cfg, 'target_test')),
        out_dir=out_dir, label=label, teacher_spec=cfg.teacher_spec
    )
    return out_dir


def cmd_ablate(cfg: ExperimentConfig,
               seed: int = None,
               parallel: int = 1) -> List[Path]:
    """
    Run the data-free method with each combination of enhancements in the
    ablation matrix.

    :param cfg: the experiment configuration
    :param seed: the seed
    :param parallel: the number of runs to execute at once (in separate
        processes)
    :return: the report files
    """
    seed = cfg.train.seed if seed is None else seed
    load_teacher(cfg)
    jobs = [(cfg, label, flags, seed) for label, flags in ABLATIONS]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            dirs = list(pool.map(_ablation, jobs))
    else:
        dirs = [_ablation(job) for job in jobs]
    return cmd_report(dirs, cfg.output_root / 'reports' / f'ablate-seed{seed}')


def cmd_histogram(cfg: ExperimentConfig, seed: int = None) -> List[Path]:
    """
    Compare the teacher's predictions on OOD images and on noise with the
    target domain's depths.

    :param cfg: the experiment configuration
    :param seed: seeds the noise
    :return: the files that were written
    """
    seed = cfg.train.seed if seed is None else seed
    teacher = load_teacher(cfg)
    target = as_arrays(load_manifest(data_dir(cfg, 'target_test')))
    ood = as_arrays(load_manifest(data_dir(cfg, 'ood')))
    analysis = histogram_analysis(
        teacher, target.depth, ood.rgb, seed=seed,
        bins=cfg.evaluation.histogram_bins,
        batch_size=cfg.evaluation.batch_size
    )
    out_dir = cfg.output_root / 'reports' / 'histogram'
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / 'histograms.json'
    json_path.write_text(json.dumps({
        'bin_edges': analysis.target.bin_edges.tolist(),
        'target': analysis.target.counts.tolist(),
        'ood': analysis.ood.counts.tolist(),
        'noise': analysis.noise.counts.tolist(),
        'jsd_ood': analysis.jsd_ood,
        'jsd_noise': analysis.jsd_noise
    }, indent=2) + '\n')
    plot_histograms(analysis, out_dir / 'histograms.png')
    logging.getLogger(__name__).info(
        f'JSD(OOD, target) = {analysis.jsd_ood:.4f}; '
        f'JSD(noise, target) = {analysis.jsd_noise:.4f}'
    )
    return [json_path, out_dir / 'histograms.png']


def cmd_scale(cfg: ExperimentConfig, seed: int = None) -> List[Path]:
    """
    Distill with the OOD set truncated to each configured size.

    :param cfg: the experiment configuration
    :param seed: the seed
    :return: the report files
    """
    train = train_config(cfg, seed)
    teacher = load_teacher(cfg)
    ood = as_arrays(load_manifest(data_dir(cfg, 'ood')))
    test = as_arrays(load_manifest(data_dir(cfg, 'target_test')))
    records = []
    for size in cfg.sizes.ood_scale:
        subset = type(ood)(*(a[:size] for a in ood))
        label = f'n{size}'
        out_dir = run_dir(cfg, Method.KD_OOD, train.seed, label)
        record = run_kd_ood(teacher, subset, train, cfg.student_spec,
                            test=test, out_dir=out_dir)
        record.label = label
        record.extras['ood_size'] = min(size, len(ood.rgb))
        record.save(out_dir)
        records.append(record)
    return make_report(
        records, cfg.output_root / 'reports' / f'scale-seed{train.seed}'
    )


def cmd_mix(cfg: ExperimentConfig, seed: int = None) -> List[Path]:
    """
    Dump the mixes of the first OOD batch for inspection.  If the data-free
    run of this seed has been trained, its transformation network's output is
    dumped as well.

    :param cfg: the experiment configuration
    :param seed: seeds the mixing
    :return: the files that were written
    """
    train = train_config(cfg, seed)
    ood = as_arrays(load_manifest(data_dir(cfg, 'ood')))
    count = max(2, train.batch_size)
    batch = [
        Sample(rgb=rgb, depth=depth, semantics=semantics)
        for rgb, depth, semantics in zip(ood.rgb[:count], ood.depth[:count],
                                         ood.semantics[:count])
    ]
    results = mix_batch(batch, seed=train.seed,
                        include_background=train.include_background)
    transformed = [None] * len(results)
    g_path = run_dir(cfg, Method.DATAFREE_FULL, train.seed) / CKPT_DIR / 'g.pt'
    if g_path.exists():
        g, _ = load_checkpoint(g_path, cfg.transform_spec)
        mixed = torch.from_numpy(np.stack([r.mixed_rgb for r in results]))
        with torch.no_grad(), evaluating(g):
            transformed = list(forward_transform(g, mixed).numpy())
    out_dir = cfg.output_root / 'reports' / f'mix-seed{train.seed}'
    written = []
    for b, (result, image) in enumerate(zip(results, transformed)):
        written.extend(dump_mix(result, out_dir, f'mix{b}', image))
    logging.getLogger(__name__).info(
        f'Wrote {len(results)} mixes to {out_dir}.'
    )
    return written


def cmd_invert(cfg: ExperimentConfig, seed: int = None) -> List[Path]:
    """
    Optimize the OOD images themselves to match the teacher's statistics and
    distill a student on the result.

    :param cfg: the experiment configuration
    :param seed: the seed
    :return: the report files
    """
    train = train_config(cfg, seed)
    teacher = load_teacher(cfg)
    ood = as_arrays(load_manifest(data_dir(cfg, 'ood')))
    inverted = invert_dataset(
        teacher, ood, alpha=train.alpha, beta=train.beta,
        steps=cfg.evaluation.inversion_steps, lr=cfg.evaluation.inversion_lr,
        batch_size=cfg.evaluation.batch_size, layer_mask=train.bn_layer_mask
    )
    label = 'inverted'
    out_dir = run_dir(cfg, Method.KD_OOD, train.seed, label)
    record = run_kd_ood(teacher, inverted, train, cfg.student_spec,
                        test=load_manifest(data_dir(cfg, 'target_test')),
                        out_dir=out_dir)
    record.label = label
    record.extras['image_discrepancy'] = float(
        np.abs(inverted.rgb - ood.rgb).mean()
    )
    record.save(out_dir)
    return make_report(
        [record], cfg.output_root / 'reports' / f'invert-seed{train.seed}'
    )


def cmd_gap(cfg: ExperimentConfig,
            seed: int = None,
            workers: int = 1) -> List[Path]:
    """
    Distill from OOD sets at each configured distance from the target domain.

    :param cfg: the experiment configuration
    :param seed: the seed
    :param workers: the number of generating processes
    :return: the report files
    """
    train = train_config(cfg, seed)
    teacher = load_teacher(cfg)
    test = as_arrays(load_manifest(data_dir(cfg, 'target_test')))
    records = []
    for t in cfg.gap_levels:
        domain = blend_domains(cfg.domain_a, cfg.domain_b, float(t),
                               name=f'gap-t{t:g}')
        gap_dir = data_dir(cfg, 'gap') / f't{t:g}'
        generate_dataset(domain, cfg.sizes.ood, gap_dir, workers=workers)
        label = f'gap{t:g}'
        out_dir = run_dir(cfg, Method.KD_OOD, train.seed, label)
        record = run_kd_ood(teacher, load_manifest(gap_dir), train,
                            cfg.student_spec, test=test, out_dir=out_dir)
        record.label = label
        record.extras['gap'] = float(t)
        record.save(out_dir)
        records.append(record)
    return make_report(
        records, cfg.output_root / 'reports' / f'gap-seed{train.seed}'
    )


def parser() -> argparse.ArgumentParser:
    """
    Create the argument parser.

    :return: the parser
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path,
                        help='a JSON file merged over the defaults')
    common.add_argument('--out', type=Path, help='the output root')
    common.add_argument('--seed', type=int, help='overrides the seed')
    common.add_argument('--verbose', '-v', action='store_true',
                        help='log debug messages')
    common.add_argument('--quiet', '-q', action='store_true',
                        help='log warnings and errors only')
    root = argparse.ArgumentParser(
        prog='depthkd',
        description='Data-free knowledge distillation for depth estimation.'
    )
    root.add_argument('--version', action='version',
                      version=f'%(prog)s {__version__}')
    commands = root.add_subparsers(dest='command', required=True)
    gen = commands.add_parser('gen', parents=[common],
                              help='generate the datasets')
    gen.add_argument('--workers', type=int, default=1,
                     help='the number of generating processes')
    run = commands.add_parser('run', parents=[common], help='run a method')
    run.add_argument('--method', required=True,
                     choices=[m.value for m in Method])
    report = commands.add_parser('report', parents=[common],
                                 help='report on finished runs')
    report.add_argument('run_dirs', nargs='+', type=Path)
    report.add_argument('--name', default='report',
                        help='the report directory (under <out>/reports)')
    commands.add_parser('attack', parents=[common],
                        help='distill on adversarially perturbed images')
    ablate = commands.add_parser('ablate', parents=[common],
                                 help='run the ablation matrix')
    ablate.add_argument('--parallel', type=int, default=1,
                        help='the number of runs to execute at once')
    commands.add_parser('histogram', parents=[common],
                        help='compare depth histograms')
    commands.add_parser('scale', parents=[common],
                        help='distill with growing OOD sets')
    commands.add_parser('mix', parents=[common],
                        help='dump mixed OOD images')
    commands.add_parser('invert', parents=[common],
                        help='distill on teacher-inverted OOD images')
    gap = commands.add_parser('gap', parents=[common],
                              help='distill across the domain gap')
    gap.add_argument('--workers', type=int, default=1,
                     help='the number of generating processes')
    return root


def main(argv: Sequence[str] = None) -> int:
    """
    Run the command line.

    :param argv: the arguments (by default, the process's)
    :return: the exit code
    """
    args = parser().parse_args(argv)
    logging.basicConfig(
        level=(
            logging.DEBUG if args.verbose
            else logging.WARNING if args.quiet else logging.INFO
        ),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s'
    )
    logger = logging.getLogger(__name__)
    try:
        cfg = load_config(
            args.config,
            {'output_root': str(args.out)} if args.out is not None else None
        )
        if args.command == 'gen':
            cmd_gen(cfg, workers=args.workers)
        elif args.command == 'run':
            cmd_run(cfg, Method(args.method), args.seed)
        elif args.command == 'report':
            cmd_report(args.run_dirs,
                       cfg.output_root / 'reports' / args.name)
        elif args.command == 'attack':
            cmd_attack(cfg, args.seed)
        elif args.command == 'ablate':
            cmd_ablate(cfg, args.seed, args.parallel)
        elif args.command == 'histogram':
            cmd_histogram(cfg, args.seed)
        elif args.command == 'scale':
            cmd_scale(cfg, args.seed)
        elif args.command == 'mix':
            cmd_mix(cfg, args.seed)
        elif args.command == 'invert':
            cmd_invert(cfg, args.seed)
        else:
            cmd_gap(cfg, args.seed, args.workers)
    except ConfigError as cfe:
        logger.error(cfe.message)
        return EXIT_CONFIG
    except DepthKDError as dke:
        logger.error(dke.message)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
