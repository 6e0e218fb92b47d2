import numpy as np
from mbcnet.numerics import Tape, matmul, relu, sigmoid, fsum

class TimeTape:
    def setup(self):
        rng = np.random.default_rng(0)
        self.x = rng.normal(size=(256, 64))
        self.W1 = rng.normal(size=(64, 64))/8
        self.W2 = rng.normal(size=(64, 1))/8

    def _forward(self):
        tape = Tape()
        W1 = tape.variable(self.W1, 'W1')
        W2 = tape.variable(self.W2, 'W2')
        out = fsum(sigmoid(matmul(relu(matmul(self.x, W1)), W2)))
        return tape, out

    def time_record(self):
        self._forward()

    def time_record_backward(self):
        tape, out = self._forward()
        tape.backward(out)
