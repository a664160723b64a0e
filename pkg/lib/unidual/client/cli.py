#!/usr/bin/env python
#
# Licensed under the Apache License, Version 2.0 (the "License");
# You may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0

"""
Command line entry point.

    unidual synth     --config c.cfg --out dir [--count N] [--split train|eval]
    unidual train     --config c.cfg --mode unidual_aux --out runs/a
    unidual eval      --config c.cfg --checkpoint runs/a/final.udck
    unidual convert   --deflate | --inflate --t 3 | --extract image|video --in a.udck --out b.udck
    unidual gradcheck --config c.cfg --precision 64 --norm none
    unidual inspect   --config c.cfg --checkpoint runs/a/final.udck --out dir [--source video] [--unit -1] [--k 3]

Results go to stdout, errors and logging to stderr. Exit codes: 0 success,
1 validation error, 2 runtime failure.
"""

import argparse
import logging
import os
import sys
import traceback

from unidual.autograd.gradcheck import SWITCH_POLICIES, grad_check
from unidual.common import exceptions
from unidual.common.config import RunConfig, format_config_help
from unidual.common.constants import EXIT_CODE, Modality, Sections, Split
from unidual.common.utils import make_dirs, setup_logging
from unidual.common.version import release_version
from unidual.data.dump import dump_example, dump_feature_map, frame_extension, write_frame
from unidual.data.stream import MixedBatch, SubBatch
from unidual.data.synth import gen_motion_clip, gen_shape_image, generate, sources_from_config
from unidual.models.config import model_config_from_run_config
from unidual.models.inspection import top_activated_maps
from unidual.models.network import Network
from unidual.surgery.checkpoint import load_checkpoint, read_checkpoint
from unidual.surgery.conversion import deflate_weights, extract_pathway, inflate_weights
from unidual.training.engine import TrainingPlan, compute_losses, total_loss
from unidual.training.runner import EvalSettings, build_trainer, evaluate_sources, tasks_of
from unidual.training.variants import VARIANTS, get_variant


class ArgumentError(exceptions.WrongParameterException):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError("%s\n%s" % (message, self.format_usage().strip()))


def load_run_config(args):
    return RunConfig.load(args.config, args.set or [], search=args.config is None)


def synth(args, out=sys.stdout):
    config = load_run_config(args)
    split = Split.parse(args.split)
    written = 0
    for source in sources_from_config(config):
        for index in range(args.count):
            example = generate(source, config.config_get_int(Sections.Data, 'seed'), index, split)
            prefix = '%s_%04d_label%s' % (source.source_id, index, example.label)
            written += len(dump_example(example, args.out, prefix))
    out.write("wrote %s frames to %s\n" % (written, args.out))
    return EXIT_CODE.OK


def train(args, out=sys.stdout):
    config = load_run_config(args)
    mode = args.mode or config.config_get(Sections.Train, 'mode')
    trainer = build_trainer(config, mode, args.out, init_checkpoint=args.init)
    metrics, _ = trainer.run()
    header = metrics.header
    out.write(','.join(header) + '\n')
    out.write(','.join(str(v) for v in metrics.row(metrics.records[-1])) + '\n')
    return EXIT_CODE.OK


def evaluate(args, out=sys.stdout):
    config = load_run_config(args)
    net = load_checkpoint(args.checkpoint).strip_aux_heads()
    task_ids = [task.task_id for task in net.config.tasks]
    sources = [s for s in sources_from_config(config) if s.source_id in task_ids]
    if not sources:
        raise exceptions.ConfigError("No configured source matches the checkpoint tasks %s" % task_ids)
    for source_id, metrics in sorted(evaluate_sources(net, sources, EvalSettings.from_run_config(config)).items()):
        out.write("%s %s\n" % (source_id, metrics))
    return EXIT_CODE.OK


def convert(args, out=sys.stdout):
    ckpt = read_checkpoint(args.input)
    if args.deflate:
        converted = deflate_weights(ckpt)
    elif args.inflate:
        converted = inflate_weights(ckpt, args.t)
    else:
        converted = extract_pathway(ckpt, Modality.parse(args.extract))
    make_dirs(os.path.dirname(os.path.abspath(args.output)))
    converted.write(args.output)
    out.write("%s: %s -> %s, %s tensors\n" % (args.output, ckpt.config.arch.value, converted.config.arch.value,
                                              len(converted.tensors)))
    return EXIT_CODE.OK


def gradient_batch(sources, seed):
    """
    One example of every source.
    """
    return MixedBatch(0, [SubBatch(source, [generate(source, seed, 0)]) for source in sources])


def gradcheck(args, out=sys.stdout):
    config = load_run_config(args)
    if args.precision:
        config.set(Sections.Model, 'precision', args.precision)
    if args.norm:
        config.set(Sections.Model, 'norm', args.norm)
    variant = get_variant(args.mode or config.config_get(Sections.Train, 'mode'))
    sources = variant.select_sources(sources_from_config(config))
    net = Network(model_config_from_run_config(config, tasks_of(sources), arch=variant.arch,
                                               aux_heads=variant.aux_heads, inflate_images=variant.inflate_images))
    net.train()
    plan = TrainingPlan.from_run_config(config, variant.mode, sources)
    batch = gradient_batch(sources, config.config_get_int(Sections.Data, 'seed'))

    report = grad_check(lambda: total_loss(compute_losses(net, plan, batch)), net.registry.trainable(),
                        eps=args.eps, tol=args.tol, sample_size=args.sample_size,
                        switches=args.switches)
    for group, error in sorted(report.by_group().items()):
        out.write("%s %.3e\n" % (group, error))
    out.write("max %.3e %s\n" % (report.max_error, 'ok' if report.passed else 'FAILED'))
    report.raise_on_failure()
    return EXIT_CODE.OK


def inspect(args, out=sys.stdout):
    config = load_run_config(args)
    net = load_checkpoint(args.checkpoint)
    sources = sources_from_config(config)
    source = sources[0]
    if args.source:
        matching = [s for s in sources if s.source_id == args.source]
        if not matching:
            raise exceptions.ConfigError("Unknown source %s" % args.source)
        source = matching[0]
    seed = config.config_get_int(Sections.Eval, 'seed')
    if source.modality == Modality.Image:
        example = gen_shape_image(source, seed, args.index, Split.Eval)
    else:
        example = gen_motion_clip(source, seed, args.index, Split.Eval)

    maps = top_activated_maps(net, example.pixels, args.unit, args.k)
    make_dirs(args.out)
    pixels = example.pixels
    ext = frame_extension(pixels)
    length = pixels.shape[1]
    for name, f in [('first', 0), ('middle', length // 2), ('last', length - 1)]:
        write_frame(os.path.join(args.out, 'input_%s.%s' % (name, ext)), pixels[:, f])
    for pathway in (Modality.Image, Modality.Video):
        for activation in maps[pathway]:
            path = os.path.join(args.out, '%s_%s_%s.pgm' % (pathway.value, activation.unit, activation.channel))
            dump_feature_map(activation.feature_map, path)
            out.write("%s peak %.4f\n" % (path, activation.peak))
    return EXIT_CODE.OK


COMMANDS = {
    'synth': [synth, 'dump synthetic examples as PGM/PPM frames'],
    'train': [train, 'train a model variant, writing metrics.csv and final.udck'],
    'eval': [evaluate, 'evaluate a checkpoint on the configured sources'],
    'convert': [convert, 'deflate, inflate or split a checkpoint'],
    'gradcheck': [gradcheck, 'compare gradients with central differences'],
    'inspect': [inspect, 'dump the most activated feature maps of both pathways'],
}


def _add_config_arguments(parser):
    parser.add_argument('--config', default=None, help='configuration file')
    parser.add_argument('--set', action='append', metavar='SECTION.KEY=VALUE', help='override a configuration key')


def get_parser():
    parser = _Parser(prog='unidual', description='UniDual toy deep-learning kit',
                     epilog=format_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--version', action='version', version='%(prog)s ' + release_version)
    subparsers = parser.add_subparsers(dest='command', parser_class=_Parser)

    for name, (_, help_text) in sorted(COMMANDS.items()):
        sub = subparsers.add_parser(name, help=help_text, description=help_text, epilog=format_config_help(),
                                    formatter_class=argparse.RawDescriptionHelpFormatter)
        if name != 'convert':
            _add_config_arguments(sub)
        if name == 'synth':
            sub.add_argument('--out', required=True, help='output directory')
            sub.add_argument('--count', type=int, default=4, help='examples per source')
            sub.add_argument('--split', default='train', choices=['train', 'eval'])
        elif name == 'train':
            sub.add_argument('--mode', default=None, choices=sorted(VARIANTS), help='model variant (train.mode)')
            sub.add_argument('--out', required=True, help='run directory')
            sub.add_argument('--init', default=None, help='checkpoint to finetune from (train.init_checkpoint)')
        elif name == 'eval':
            sub.add_argument('--checkpoint', required=True)
        elif name == 'convert':
            action = sub.add_mutually_exclusive_group(required=True)
            action.add_argument('--deflate', action='store_true', help='video model to image model')
            action.add_argument('--inflate', action='store_true', help='image model to video model')
            action.add_argument('--extract', choices=['image', 'video'], help='one pathway of a unidual model')
            sub.add_argument('--t', type=int, default=3, help='temporal taps for --inflate')
            sub.add_argument('--in', dest='input', required=True)
            sub.add_argument('--out', dest='output', required=True)
        elif name == 'gradcheck':
            sub.add_argument('--mode', default=None, choices=sorted(VARIANTS), help='model variant (train.mode)')
            sub.add_argument('--precision', default=None, choices=['32', '64'])
            sub.add_argument('--norm', default=None, choices=['none', 'batch'])
            sub.add_argument('--eps', type=float, default=1e-5)
            sub.add_argument('--tol', type=float, default=1e-4)
            sub.add_argument('--sample-size', dest='sample_size', type=int, default=8,
                             help='coordinates checked per parameter tensor')
            sub.add_argument('--switches', default='freeze', choices=list(SWITCH_POLICIES),
                             help='ReLU and max-pool switches of the +-eps forwards: reuse them or skip coordinates')
        elif name == 'inspect':
            sub.add_argument('--checkpoint', required=True)
            sub.add_argument('--out', required=True)
            sub.add_argument('--source', default=None, help='source of the input example, the first one by default')
            sub.add_argument('--index', type=int, default=0, help='evaluation example index')
            sub.add_argument('--unit', type=int, default=-1, help='residual unit index, negative from the end')
            sub.add_argument('--k', type=int, default=3)
    return parser


def cmd_dispatch(argv=None, out=None, err=None):
    """
    Run one subcommand.

    :returns: the process exit code.
    """
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    parser = get_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise ArgumentError("a subcommand is required\n%s" % parser.format_usage().strip())
        config_path = getattr(args, 'config', None)
        setup_logging('unidual.log', RunConfig.load(config_path, getattr(args, 'set', None) or [],
                                                    search=config_path is None) if hasattr(args, 'config') else None,
                      stream=err)
        return COMMANDS[args.command][0](args, out=out)
    except SystemExit as error:
        return error.code or EXIT_CODE.OK
    except exceptions.UniDualException as error:
        err.write("%s: %s\n" % (error.__class__.__name__, error))
        logging.debug(error.get_detail())
        return error.exit_code
    except ValueError as error:
        err.write("%s\n" % error)
        return EXIT_CODE.ValidationError
    except Exception as error:
        err.write("%s: %s\n%s" % (error.__class__.__name__, error, traceback.format_exc()))
        return EXIT_CODE.RuntimeFailure


def main():
    sys.exit(cmd_dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
