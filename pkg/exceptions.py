# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


class BlcTransferError(Exception):
    """Base class for every error raised by liner_blc_transfer."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        msg = super().__str__()
        if self.context:
            ctx = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
            return f"{msg} ({ctx})"
        return msg


class InvalidInputError(BlcTransferError, ValueError):
    pass


class ConfigError(BlcTransferError, ValueError):
    pass


class StateError(BlcTransferError, RuntimeError):
    pass


class TrainingError(BlcTransferError, RuntimeError):
    """Non-finite losses or gradients; `context` holds the diagnostics."""


class ModelFormatError(BlcTransferError, ValueError):
    pass


class DataIOError(BlcTransferError, OSError):
    pass
