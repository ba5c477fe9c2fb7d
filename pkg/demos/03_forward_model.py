"""Learning one-step dynamics with the MSE regressor.

Trained on slippery-grid transitions, the model's point predictions converge
to the conditional mean of the next-state distribution, which is what lets
the constraint evaluator anticipate where an action will probably land.
"""
import numpy as np

from logicrl import ForwardModel, GridWorld

env = GridWorld(seed=3)
rng = np.random.default_rng(3)

states, actions, nexts = [], [], []
for _ in range(4000):
    a = int(rng.integers(5))
    t = env.step(a)
    states.append(t.state)
    actions.append(a)
    nexts.append(t.next_state)
    if t.done:
        env.reset()
states, actions, nexts = np.array(states), np.array(actions), np.array(nexts)

model = ForwardModel(2, 5, seed=2)
model.update_normalizer(states)
batch_rng = np.random.default_rng(7)
for step in range(2001):
    idx = batch_rng.integers(0, len(states), size=256)
    loss = model.fit_step((states[idx], actions[idx], nexts[idx]))
    if step % 400 == 0:
        print(f"step {step:5d}  loss {loss:.5f}")

labels = ("left", "right", "up", "down", "stay")
print("\npredictions from (8, 5) against the analytic conditional mean:")
for a in range(5):
    pred = model.predict(np.array([8.0, 5.0]), a)
    mean = env.transition_mean([8, 5], a)
    print(f"  {labels[a]:>5}: predicted {np.round(pred, 2)}  analytic mean {np.round(mean, 2)}")
