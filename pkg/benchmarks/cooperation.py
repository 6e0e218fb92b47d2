import numpy as np
from mbcnet.cooperation import (bct_loss, classify_disagreement, init_transforms,
                                mdr_loss)

class TimeCooperation:
    def setup(self):
        rng = np.random.default_rng(0)
        self.y = rng.integers(0, 2, 1024)
        self.probabilities = {b: rng.uniform(0.01, 0.99, (1024, 1))
                              for b in ('efgc', 'deep', 'cross')}
        self.latents = {b: rng.normal(size=(1024, 32)) for b in ('efgc', 'deep', 'cross')}
        self.params = init_transforms(('efgc', 'deep', 'cross'), 32)

    def time_classify_disagreement(self):
        classify_disagreement(self.probabilities['efgc'], self.probabilities['deep'], self.y)

    def time_bct_loss(self):
        bct_loss(self.probabilities, self.y)

    def time_bct_loss_no_discrimination(self):
        bct_loss(self.probabilities, self.y, 'no_discrimination')

    def time_mdr_loss(self):
        mdr_loss(self.latents, self.params)
