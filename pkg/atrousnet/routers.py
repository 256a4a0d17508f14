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

"""This module contains the definition of:

  * Router class
  * LoggingRouter class
  * TimingRouter class
  * Routers namespace class

Engine events are written to named channels: ``trace`` carries one line
per evaluated layer, ``timing`` a TimingEntry per evaluated layer and
``warning`` free-form warnings.

"""

import logging
import threading
import traceback

from atrousnet.common import TimingEntry


LOGGER = logging.getLogger(__name__)


class Router:

    __slots__ = '_engine', '_name', '_priority', '_active'

    def __init__(self, name: str, priority: int):
        self._engine = None
        self._name = name
        self._priority = priority
        self._active = True

    @property
    def name(self) -> str:
        """The Router name."""
        return self._name

    @property
    def priority(self) -> int:
        """The Router priority."""
        return self._priority

    @property
    def active(self) -> bool:
        return self._active

    def query(self, _channel: str) -> bool:
        """This method should return True if the provided channel
        is handled by the Router.

        """
        return False

    def write(self, _channel: str, _message):
        """If the query method returns True for the given channel,
        this method will be called with the forwarded message.

        """
        return None

    def activate(self):
        """Activate the Router."""
        self._active = True

    def deactivate(self):
        """Deactivate the Router."""
        self._active = False

    def delete(self):
        """Delete the Router."""
        if self._engine is None:
            raise RuntimeError("Router %s is not installed" % self._name)

        self._engine.routers.pop(self._name, None)
        self._engine = None


class LoggingRouter(Router):
    """Python logging Router.

    Re-directs the engine channels to the Python logging library.

    """

    __slots__ = '_engine', '_name', '_priority', '_active'

    LOGGERS = {'trace': logging.debug,
               'timing': logging.debug,
               'warning': logging.warning}

    def __init__(self):
        super().__init__('python-logging-router', 30)

    def query(self, channel: str) -> bool:
        return channel in self.LOGGERS

    def write(self, channel: str, message):
        if isinstance(message, TimingEntry):
            message = "%s took %.6fs" % message

        self.LOGGERS[channel](message)


class TimingRouter(Router):
    """Accumulates the wall time spent in every layer."""

    __slots__ = '_engine', '_name', '_priority', '_active', '_lock', '_totals'

    def __init__(self, name: str = 'timing-router', priority: int = 20):
        super().__init__(name, priority)
        self._lock = threading.Lock()
        self._totals = {}

    def query(self, channel: str) -> bool:
        return channel == 'timing'

    def write(self, _channel: str, entry: TimingEntry):
        with self._lock:
            self._totals[entry.name] = self._totals.get(entry.name, 0.0) + \
                entry.seconds

    @property
    def totals(self) -> dict:
        """Seconds spent per layer since the last reset."""
        with self._lock:
            return dict(self._totals)

    def total(self) -> float:
        return sum(self.totals.values())

    def reset(self):
        with self._lock:
            self._totals.clear()


class Routers:
    """Routers namespace class.

    .. note::

       All the Routers methods are accessible through the Engine class.

    """

    __slots__ = ['_engine']

    def __init__(self, engine):
        self._engine = engine

    def routers(self) -> iter:
        """The routers installed within the Engine."""
        return self._engine.routers.values()

    def add_router(self, router: Router):
        """Add the given Router to the Engine."""
        router._engine = self._engine
        self._engine.routers[router.name] = router

    def write_router(self, channel: str, message):
        """Forward the message to every active Router handling the channel,
        in descending priority order.

        """
        for router in sorted(list(self._engine.routers.values()),
                             key=lambda r: r.priority, reverse=True):
            if not router.active:
                continue

            try:
                if router.query(channel):
                    router.write(channel, message)
            except Exception as error:
                LOGGER.error("Router %s callback error: %r\n%s", router.name,
                             error, traceback.format_exc())
