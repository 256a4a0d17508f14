# Copyright (c) 2024, The atrousnet developers
# All rights reserved.

# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:

# 1. Redistributions of source code must retain the above copyright notice,
# this list of conditions and the following disclaimer.

# 2. Redistributions in binary form must reproduce the above copyright notice,
# this list of conditions and the following disclaimer in the documentation
# and/or other materials provided with the distribution.

# 3. Neither the name of the copyright holder nor the names of its contributors
# may be used to endorse or promote products derived from this software without
# specific prior written permission.

# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO,
# THE IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR
# PURPOSE ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR CONTRIBUTORS
# BE LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL, EXEMPLARY,
# OR CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO, PROCUREMENT
# OF SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA, OR PROFITS; OR BUSINESS
# INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF LIABILITY,
# WHETHER IN CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING NEGLIGENCE
# OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE OF THIS SOFTWARE,
# EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

"""Command line interface.

Every failure prints a single ``atrousnet: error: <Kind>: <message>`` line
on stderr and exits with a non zero code: 1 for usage errors, 2 for data
errors and 3 for verification failures.

"""

import sys
import logging
import argparse

import numpy

from atrousnet import __version__
from atrousnet.engine import Engine
from atrousnet.config import Settings
from atrousnet.verify import run_suite
from atrousnet.images import read_image, write_image, write_labels, colorize
from atrousnet.tensor import seeded_fill, Uniform
from atrousnet.analysis import TimingSummary, REFERENCE_PARAMS
from atrousnet.analysis import gridding_coverage
from atrousnet.common import AtrousNetError, ConfigurationError
from atrousnet.common import VerificationError, ExitCode, exit_code


PROGRAM = 'atrousnet'
LOGGER = logging.getLogger(PROGRAM)


class UsageError(ConfigurationError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def input_size(value: str) -> tuple:
    """Parse a HEIGHTxWIDTH pair."""
    try:
        height, width = (int(v) for v in value.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected HEIGHTxWIDTH, got '%s'" % value)
    if height < 1 or width < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")

    return height, width


def rate_list(value: str) -> list:
    try:
        rates = [int(v) for v in value.replace(' ', '').split(',') if v]
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected comma separated rates, got '%s'" % value)
    if not rates or min(rates) < 1:
        raise argparse.ArgumentTypeError("rates must be positive")

    return rates


def network_options(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('network')
    group.add_argument('--fusion', choices=('ffn', 'add'), default='ffn')
    group.add_argument('--daspp-pool', choices=('avg', 'max'), default='avg')
    group.add_argument('--daspp-merge', choices=('concat', 'sum'),
                       default='concat')
    group.add_argument('--attention', choices=('cam', 'se', 'none'),
                       default='cam')
    group.add_argument('--context', choices=('daspp', 'aspp'),
                       default='daspp')
    group.add_argument('--spatial', choices=('spn', 'none'), default='spn')
    group.add_argument('--classes', type=int, default=19)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=PROGRAM, description=(
        "CPU inference engine for real-time atrous semantic segmentation."))
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('--config', help="INI file with an [atrousnet] "
                        "section")
    parser.add_argument('--threads', type=int)
    parser.add_argument('--kernel-path', choices=('naive', 'optimized'))
    parser.add_argument('--rate-mode', choices=('hold', 'first'))
    parser.add_argument('-v', '--verbose', action='count', default=0)

    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    command = commands.add_parser('infer', help="segment a PPM image")
    command.add_argument('--image', required=True)
    command.add_argument('--weights', required=True)
    command.add_argument('--out', help="colorized prediction (PPM)")
    command.add_argument('--labels-out', help="raw class ids (PGM)")
    network_options(command)

    command = commands.add_parser('analyze', help="receptive field table")
    command.add_argument('--report', required=True)
    command.add_argument('--input-size', type=input_size,
                         default=(448, 896))
    command.add_argument('--format', choices=('text', 'json'),
                         default='text')
    network_options(command)

    command = commands.add_parser('count', help="parameters and FLOPs")
    command.add_argument('--input-size', type=input_size,
                         default=(448, 896))
    command.add_argument('--json', action='store_true')
    network_options(command)

    command = commands.add_parser('gridding', help="atrous coverage density")
    command.add_argument('--rates', type=rate_list, required=True)
    command.add_argument('--kernel', type=int, default=3)

    command = commands.add_parser('profile', help="time the forward pass")
    command.add_argument('--input-size', type=input_size,
                         default=(224, 448))
    command.add_argument('--repeats', type=int, default=5)
    command.add_argument('--path', choices=('naive', 'optimized'),
                         default='optimized')
    command.add_argument('--seed', type=int, default=0)
    network_options(command)

    command = commands.add_parser('verify', help="run the oracle suite")
    command.add_argument('--cases', type=int, default=100)
    command.add_argument('--seed', type=int, default=0)

    command = commands.add_parser('init-weights', help="seeded weights")
    command.add_argument('--seed', type=int, required=True)
    command.add_argument('--out', required=True)
    command.add_argument('--manifest', help="parameter listing")
    network_options(command)

    return parser


def load_settings(args) -> Settings:
    overrides = {'threads': args.threads,
                 'kernel_path': args.kernel_path,
                 'rate_mode': args.rate_mode}
    if args.config is not None:
        return Settings.from_file(args.config, **overrides)

    return Settings().replace(**overrides)


def make_engine(args, settings: Settings) -> Engine:
    return Engine(settings, num_classes=args.classes,
                  attention=args.attention, context=args.context,
                  pool=args.daspp_pool, merge=args.daspp_merge,
                  fusion=args.fusion, spatial=args.spatial)


def infer(args, settings: Settings, out):
    engine = make_engine(args, settings)
    engine.load(args.weights)

    image = read_image(args.image, settings.mean, settings.std)
    labels = engine.predict(image)

    if args.out is not None:
        write_image(colorize(labels), args.out)
    if args.labels_out is not None:
        write_labels(labels, args.labels_out)

    present = numpy.unique(labels)
    out.write("%dx%d pixels, classes: %s\n" % (
        labels.shape[0], labels.shape[1], ' '.join(map(str, present))))


def analyze(args, settings: Settings, out):
    engine = make_engine(args, settings)
    report = engine.count(args.input_size)

    with open(args.report, 'w') as stream:
        stream.write(report.to_json() if args.format == 'json'
                     else report.to_text())

    fields = [r.rf for r in report.layers if r.rf is not None]
    out.write("%d layers, largest receptive field %d pixels\n"
              % (len(report.layers), max(fields)))


def count(args, settings: Settings, out):
    report = make_engine(args, settings).count(args.input_size)

    if args.json:
        out.write(report.to_json() + '\n')
    else:
        low, high = report.flops_bracket()
        out.write(report.summary() + '\n')
        out.write("FLOPs bracket: %.2f G to %.2f G, reference %s\n" % (
            low / 1e9, high / 1e9,
            'met' if report.within_reference() else 'missed'))
        out.write("params: %.3f M against %.1f M (%.2fx), reference %s\n" % (
            report.total_params / 1e6, REFERENCE_PARAMS / 1e6,
            report.total_params / REFERENCE_PARAMS,
            'met' if report.params_within_reference() else 'missed'))
        for label, density in report.coverage.items():
            out.write("coverage %s: %.5f\n" % (label, density))


def gridding(args, _settings: Settings, out):
    stack = [(args.kernel, rate) for rate in args.rates]

    out.write("stack %s: %.5f\n" % (
        ','.join(map(str, args.rates)), gridding_coverage(stack)))
    for rate in args.rates:
        out.write("rate %d: %.5f\n" % (rate,
                                        gridding_coverage([(args.kernel,
                                                            rate)])))


def profile(args, settings: Settings, out):
    engine = make_engine(args, settings)
    engine.initialize(args.seed)
    image = seeded_fill((1, 3) + args.input_size, args.seed, Uniform(1.0),
                        stream=1)

    summary = engine.profile(image, args.repeats, args.path)
    out.write(format_timing(summary))


def format_timing(summary: TimingSummary) -> str:
    lines = ["%s path: mean %.6fs stddev %.6fs over %d runs" % (
        summary.path, summary.mean, summary.stddev, summary.repeats),
        "naive and optimized paths agree within %.3g" % summary.max_error]
    slowest = sorted(summary.layers.items(), key=lambda i: i[1],
                     reverse=True)
    lines.extend("  %-48s %.6fs" % item for item in slowest[:10])

    return '\n'.join(lines) + '\n'


def verify(args, settings: Settings, out):
    results = run_suite(settings, cases=args.cases, seed=args.seed)

    for result in results:
        out.write("%s %s: %s\n" % ('PASS' if result.passed else 'FAIL',
                                   result.name, result.detail))

    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationError("failed checks: %s" % ', '.join(failed))


def init_weights(args, settings: Settings, out):
    engine = make_engine(args, settings)
    store = engine.initialize(args.seed)
    engine.save(args.out)

    if args.manifest is not None:
        with open(args.manifest, 'w') as stream:
            stream.write(engine.manifest())

    out.write("%d entries written to %s\n" % (len(store), args.out))


COMMANDS = {'infer': infer,
            'analyze': analyze,
            'count': count,
            'gridding': gridding,
            'profile': profile,
            'verify': verify,
            'init-weights': init_weights}


def main(argv: list = None, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr

    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else
            logging.INFO if args.verbose else logging.WARNING,
            format='%(name)s: %(levelname)s: %(message)s')
        COMMANDS[args.command](args, load_settings(args), out)
    except (AtrousNetError, OSError, ValueError) as error:
        err.write("%s: error: %s: %s\n" % (
            PROGRAM, type(error).__name__,
            str(error).replace('\n', ' ')))
        return int(exit_code(error))

    return int(ExitCode.SUCCESS)
