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

import sys

from cffi import FFI


ffibuilder = FFI()


with open("lib/atrousnet.c") as source_file:
    KERNELS_SOURCE = source_file.read()


with open("lib/atrousnet.cdef") as cdef_file:
    KERNELS_CDEF = cdef_file.read()


# no fused multiply-add, naive results match the reference loops bit for bit
if sys.platform == "win32":
    COMPILE_ARGS = ["/O2", "/fp:precise"]
    LIBRARIES = []
else:
    COMPILE_ARGS = ["-O2", "-ffp-contract=off"]
    LIBRARIES = ["m"]


ffibuilder.set_source("_atrousnet",
                      KERNELS_SOURCE,
                      libraries=LIBRARIES,
                      extra_compile_args=COMPILE_ARGS)


ffibuilder.cdef(KERNELS_CDEF)


if __name__ == "__main__":
    ffibuilder.compile(verbose=True)
