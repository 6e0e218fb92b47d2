import numpy as np
from mbcnet.evaluation import auc, logloss

class TimeMetrics:
    def setup(self):
        rng = np.random.default_rng(0)
        self.y = rng.integers(0, 2, 100000)
        self.scores = rng.uniform(size=100000)
        self.ties = np.round(self.scores, 2)

    def time_auc(self):
        auc(self.scores, self.y)

    def time_auc_ties(self):
        auc(self.ties, self.y)

    def time_logloss(self):
        logloss(self.scores, self.y)
