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

from atrousnet import network
from atrousnet.config import Settings
from atrousnet.weights import WeightStore
from atrousnet.analysis import Analysis
from atrousnet.common import EngineData, WeightError
from atrousnet.routers import Routers, LoggingRouter
from atrousnet.serialization import save_weights, load_weights


class Engine:
    """The engine class encapsulates a segmentation network, its weights
    and the settings it runs with.

    The methods of the Network, Analysis and Routers namespaces are
    reachable directly on the Engine.

    """

    __slots__ = ('_data', '_network', '_analysis', '_routers', '_namespaces')

    def __init__(self, settings: Settings = None, **options):
        settings = settings if settings is not None else Settings()
        options.setdefault('rate_mode', settings.rate_mode)

        self._data = EngineData(network.build_network(**options), settings)

        self._network = network.Network(self._data)
        self._analysis = Analysis(self._data)
        self._routers = Routers(self._data)

        self._routers.add_router(LoggingRouter())

        # mapping between the namespace and the methods it exposes
        self._namespaces = {m: n for n in (self._network,
                                           self._analysis,
                                           self._routers)
                            for m in dir(n) if not m.startswith('_')}

    def __getattr__(self, attr):
        try:
            return getattr(self._namespaces[attr], attr)
        except (KeyError, AttributeError):
            raise AttributeError("'%s' object has no attribute '%s'" %
                                 (self.__class__.__name__, attr))

    def __setattr__(self, attr, value):
        if attr in self.__slots__:
            super(Engine, self).__setattr__(attr, value)
            return

        raise AttributeError("'%s' object has no attribute '%s'" %
                             (self.__class__.__name__, attr))

    def __dir__(self):
        return dir(self.__class__) + list(self._namespaces.keys())

    def __repr__(self):
        return "%s(%r, weights=%r)" % (self.__class__.__name__,
                                       self._data.graph, self._data.store)

    def _store(self) -> WeightStore:
        if self._data.store is None:
            raise WeightError("no weights bound, initialize or load them")

        return self._data.store

    @property
    def settings(self) -> Settings:
        return self._data.settings

    @property
    def options(self) -> dict:
        """The options the network was built with."""
        return self._data.graph.options

    def bind(self, store: WeightStore):
        """Bind the given weights after checking them against the network."""
        store.bind(self._data.graph, strict=self._data.settings.strict_weights)
        self._data.store = store

    def initialize(self, seed: int) -> WeightStore:
        """Bind seeded random weights, batch norms start as the identity."""
        self.bind(network.random_init(self._data.graph, seed,
                                      epsilon=self._data.settings.bn_epsilon))

        return self._data.store

    def load(self, path: str):
        """Load and bind the weights stored in the file at `path`."""
        self.bind(load_weights(path))

    def save(self, path: str):
        """Save the bound weights to the file at `path`."""
        save_weights(self._store(), path)

    def fold(self):
        """Fold batch norms into the convolutions preceding them.

        The network and its weights are replaced by the folded ones.

        """
        graph, store = network.fold_network(self._data.graph,
                                            self._store())
        self._data.graph = graph
        self._data.store = store
