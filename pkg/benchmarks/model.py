import numpy as np
from mbcnet.cooperation import CoopConfig
from mbcnet.tests.helpers import tiny_data, tiny_model

class TimeModel:
    def setup(self):
        self.model = tiny_model()
        self.batch = tiny_data().train.batch(np.arange(256))
        self.coop = CoopConfig()

    def time_forward(self):
        self.model.forward(self.batch)

    def time_predict(self):
        self.model.predict(self.batch)

    def time_loss(self):
        self.model.loss(self.batch, self.coop)
