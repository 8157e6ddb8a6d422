"""
Why a simulated barrier hits less often
=======================================

An Euler path checks the barrier only at grid times, so crossings that
happen between steps are lost and the simulated knock-in price is biased
low.  The bias shrinks like the square root of the step size, so it
roughly halves each time the step is divided by four.  Here we use
a single period with one upward and one downward jump family and compare
with the transform price at three step sizes.
"""

from hyperexp_barrier.model import ModelPeriod, PiecewiseModel
from hyperexp_barrier.montecarlo import McConfig, mc_did
from hyperexp_barrier.pricing import DID, BarrierContract, did_price

model = PiecewiseModel((ModelPeriod(0.4, 0.35, (0.8,), (8.0,), (1.2,), (6.0,)),), r=0.03, spot=100.0)
contract = BarrierContract(DID, 90.0)
exact = did_price(model, contract, M=10).price
print(f"transform price {exact:.5f}")

for dt in (4e-3, 1e-3, 2.5e-4):
    est = mc_did(model, contract, McConfig(paths=20_000, dt=dt, seed=3))
    print(f"dt={dt:<7g} MC {est.mean:.5f} +/- {1.96 * est.se:.5f}  gap {exact - est.mean:+.5f}")
