"""Cart-pole with delayed environment reward and an angle budget.

The environment pays its +1 survival reward only as d-step sums, which
starves per-step credit assignment. The constraint channel is immediate:
every step whose predicted next state keeps the pole inside the tight angle
budget earns the constraint reward, so the shaped agent keeps learning
from a dense signal while the baseline waits for its lumps.
"""
import numpy as np

from logicrl import System3Config, Trainer, bind, evaluate_policy, load_constraint_file, make_env

STEPS = 100_000
D = 5
FORMULA = load_constraint_file("configs/cartpole_theta.fl")


def train(constrained: bool, seed: int = 0) -> Trainer:
    config = System3Config(
        rollout_length=20, batch_size=20, total_steps=STEPS,
        gamma=0.95, gae_lambda=0.9, learning_rate=1e-3, entropy_coef=0.01,
        use_env_reward=not constrained,
    )
    trainer = Trainer(config, "cartpole", seed=seed, d=D,
                      formula=FORMULA if constrained else None)
    while trainer.steps < STEPS:
        metrics = trainer.train_iteration()
        if metrics["iteration"] % 50 == 0:
            print(f"  iter {metrics['iteration']:4d}  steps {metrics['steps']:6d}  "
                  f"return {metrics['mean_env_return']:6.1f}  "
                  f"entropy {metrics['entropy']:.3f}")
    return trainer


for label, constrained in (("constraint-shaped", True), ("baseline", False)):
    print(f"\n{label} (d = {D}):")
    trainer = train(constrained)
    bound = bind(FORMULA, trainer.registry, trainer.schema)
    result = evaluate_policy(trainer.agent, make_env("cartpole", 1000), bound,
                             2000, seed=1000, model=trainer.model)
    print(f"  eval: mean return {result.mean_return:.0f}, "
          f"violations per 1000 steps {result.violation_count / 2:.0f}, "
          f"model-vs-reality disagreement {result.disagreement_rate:.3f}")
