"""One processing element: zero-gated MAC, window counter, partial-output
register, residual adder and the output multiplexer.

A PE computes a whole convolution window by itself. ``tick`` issues one MAC
per cycle until the counter reaches the window size. At the end of an
input-channel window the accumulator is folded into the partial-output
register (``close_partial``); ``emit`` folds the last window, optionally adds
the residual term, and narrows the result into ``out_reg``.
"""

from .fxp import ACC_MAX, ACC_MIN, narrow

NORMAL = "normal"
RESIDUAL = "residual"


class ProtocolError(RuntimeError):
    """The simulator drove a PE out of its legal sequence."""


class PE:
    __slots__ = ("acc", "psum", "counter", "window", "mode", "residual_in",
                 "out_reg", "busy", "mults", "skips", "zero_gate")

    def __init__(self, zero_gate=True):
        self.zero_gate = zero_gate
        self.acc = 0
        self.psum = 0
        self.counter = 0
        self.window = 9
        self.mode = NORMAL
        self.residual_in = 0
        self.out_reg = None
        self.busy = False
        self.mults = 0
        self.skips = 0

    def __repr__(self):
        return (f"PE(acc={self.acc}, psum={self.psum}, counter={self.counter}/{self.window},"
                f" mode={self.mode}, busy={self.busy})")

    def copy(self):
        c = PE.__new__(PE)
        for s in PE.__slots__:
            setattr(c, s, getattr(self, s))
        return c

    @property
    def issued(self):
        return self.mults + self.skips

    def start(self, bias_acc=0, window=9, mode=NORMAL):
        """Open an output element; the bias is pre-loaded into the partial sum."""
        if self.busy:
            raise ProtocolError("start on a busy PE")
        self.busy = True
        self.psum = bias_acc
        self.acc = 0
        self.counter = 0
        self.window = window
        self.mode = mode
        self.residual_in = 0

    def tick(self, x, w):
        if not self.busy:
            raise ProtocolError("tick on an idle PE")
        if self.counter >= self.window:
            raise ProtocolError("tick past the end of the window")
        if x == 0 and self.zero_gate:
            self.skips += 1
        else:
            s = self.acc + x * w
            self.acc = ACC_MAX if s > ACC_MAX else ACC_MIN if s < ACC_MIN else s
            self.mults += 1
        self.counter += 1

    def _fold(self):
        s = self.psum + self.acc
        self.psum = ACC_MAX if s > ACC_MAX else ACC_MIN if s < ACC_MIN else s
        self.acc = 0
        self.counter = 0

    def close_partial(self):
        """End of one input-channel window: fold the partial output."""
        if self.counter != self.window:
            raise ProtocolError(f"partial output before window completes ({self.counter}/{self.window})")
        self._fold()

    def absorb(self, partial):
        """Add a partial sum received over the register exchange."""
        if not self.busy:
            raise ProtocolError("absorb on an idle PE")
        s = self.psum + partial
        self.psum = ACC_MAX if s > ACC_MAX else ACC_MIN if s < ACC_MIN else s

    def load_residual(self, r):
        if self.mode != RESIDUAL:
            raise ProtocolError("residual load while in normal mode")
        self.residual_in = r

    def take_sum(self):
        """Finish without narrowing; returns the Q16.16 sum (exchange / server use)."""
        if self.counter != self.window:
            raise ProtocolError(f"sum requested before window completes ({self.counter}/{self.window})")
        self._fold()
        self.busy = False
        return self.psum

    def emit(self, partials=()):
        """Fold the last window, add exchanged partial sums in order, add the
        residual term in residual mode, and narrow into ``out_reg``."""
        if self.counter != self.window:
            raise ProtocolError(f"emit before window completes ({self.counter}/{self.window})")
        self._fold()
        for p in partials:
            self.absorb(p)
        total = self.psum
        if self.mode == RESIDUAL:
            s = total + self.residual_in
            total = ACC_MAX if s > ACC_MAX else ACC_MIN if s < ACC_MIN else s
        self.out_reg = narrow(total)
        self.busy = False
        return self.out_reg


# -- value-style helpers ----------------------------------------------------
# These copy the state and return the new one, for callers that want to
# treat a PE as an immutable value.

def pe_tick(s, x, w):
    n = s.copy()
    n.tick(x, w)
    return n


def pe_emit(s):
    n = s.copy()
    out = n.emit()
    return out, n


def pe_load_residual(s, r):
    n = s.copy()
    n.load_residual(r)
    return n
