"""
Tests are extremely important for mbcnet. Every loss, gradient and metric
has to be exactly right, because a wrong gradient or a wrong AUC produces
plausible-looking training curves rather than errors.

There are three primary types of tests that we employ:

- Exhaustive tests. These test every possible value in some range, and
  compare against a brute-force oracle written as a plain double loop. See
  for example test_bct_exhaustive() in test_cooperation and
  test_auc_exhaustive() in test_evaluation. This is the best type of test,
  but it is often impossible to do due to combinatorial explosion.

- Hypothesis tests. Hypothesis is a library that can intelligently check a
  combinatorial search space. The strategies for matrices, probabilities and
  labels are in helpers.py. For more information on hypothesis, see
  https://hypothesis.readthedocs.io/en/latest/index.html.

- Explicit tests. These are hand crafted tests that check that the output of
  a function is some exact value, for instance the two-branch
  differentiation example whose loss is exactly 2.

Gradients are checked against central finite differences with
numerics.grad_check(). Anything recorded behind a stop-gradient (the
co-teaching soft labels) has to be held fixed on the numerical side too; see
frozen_objective() in helpers.py.

Tests that train at desk scale for minutes are marked with @slow and only run
with ``pytest --run-slow``.

"""

# Variable naming conventions in the tests:

# p: B x 1 probabilities (Matrix or array)
# y: labels, 0 or 1
# z: B x d latent
# W: d x d transformation matrix
# params: dict of parameter arrays
# values: dict of parameter Matrix values
# tape: Tape
