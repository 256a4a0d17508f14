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

"""Engine settings.

Settings are plain values with documented defaults. They can be loaded
from the ``[atrousnet]`` section of an INI file and overridden field by
field, the command line overrides what the file provides.

"""

import configparser

from atrousnet.common import ConfigurationError, enum_value
from atrousnet.common import KernelPath, RateMode


def _triple(value) -> tuple:
    if isinstance(value, str):
        value = [v for v in value.replace(',', ' ').split() if v]
    value = tuple(float(v) for v in value)
    if len(value) == 1:
        value = value * 3
    if len(value) != 3:
        raise ConfigurationError("expected 1 or 3 values, got %d" % len(value))

    return value


def _bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ('1', 'yes', 'true', 'on')

    return bool(value)


FIELDS = {'kernel_path': (lambda v: enum_value(KernelPath, v),
                          KernelPath.OPTIMIZED),
          'threads': (int, 2),
          'rate_mode': (lambda v: enum_value(RateMode, v), RateMode.HOLD),
          'bn_epsilon': (float, 1e-5),
          'leaky_slope': (float, 0.01),
          'mean': (_triple, (0.5, 0.5, 0.5)),
          'std': (_triple, (0.5, 0.5, 0.5)),
          'probe_cap': (int, 4096),
          'strict_weights': (_bool, True),
          'im2col_budget': (int, 1 << 22)}


class Settings:
    """Engine configuration.

    * kernel_path: naive (definitional loops) or optimized kernels
    * threads: workers evaluating the semantic and spatial branches
    * rate_mode: atrous rate of the non-first units of blocks 4-7,
      ``hold`` keeps the block rate, ``first`` falls back to rate 1
    * bn_epsilon, leaky_slope: numerical constants of BN and LeakyReLU
    * mean, std: per-channel input normalization
    * probe_cap: maximum input pixels perturbed by a footprint probe
    * strict_weights: reject weight stores with unused entries
    * im2col_budget: elements of one im2col block in the optimized path

    """

    __slots__ = tuple(FIELDS)

    def __init__(self, **values):
        unknown = set(values) - set(FIELDS)
        if unknown:
            raise ConfigurationError(
                "unknown setting(s): %s" % ', '.join(sorted(unknown)))

        for name, (parse, default) in FIELDS.items():
            value = values.get(name, default)
            try:
                object.__setattr__(self, name, parse(value))
            except (TypeError, ValueError) as error:
                raise ConfigurationError(
                    "invalid value for '%s': %s" % (name, error))

        self._validate()

    def __setattr__(self, attr, value):
        raise AttributeError("Settings are read-only, use replace()")

    def __eq__(self, other):
        return all(getattr(self, f) == getattr(other, f) for f in FIELDS)

    def __repr__(self):
        values = ', '.join('%s=%r' % (f, getattr(self, f)) for f in FIELDS)

        return "%s(%s)" % (self.__class__.__name__, values)

    def _validate(self):
        if self.threads < 1:
            raise ConfigurationError("threads must be positive")
        if self.bn_epsilon < 0:
            raise ConfigurationError("bn_epsilon must not be negative")
        if not 0 < self.leaky_slope < 1:
            raise ConfigurationError("leaky_slope must lie in (0, 1)")
        if any(s <= 0 for s in self.std):
            raise ConfigurationError("std values must be positive")
        if self.probe_cap < 1 or self.im2col_budget < 1:
            raise ConfigurationError("probe_cap and im2col_budget must be "
                                     "positive")

    def replace(self, **overrides) -> 'Settings':
        """Return new Settings with the given fields overridden."""
        values = {f: getattr(self, f) for f in FIELDS}
        values.update({k: v for k, v in overrides.items() if v is not None})

        return Settings(**values)

    @classmethod
    def from_file(cls, path: str, **overrides) -> 'Settings':
        """Load the ``[atrousnet]`` section of the given INI file."""
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigurationError("cannot read configuration '%s'" % path)
        if not parser.has_section('atrousnet'):
            raise ConfigurationError(
                "missing [atrousnet] section in '%s'" % path)

        values = dict(parser.items('atrousnet'))
        values.update({k: v for k, v in overrides.items() if v is not None})

        return cls(**values)
