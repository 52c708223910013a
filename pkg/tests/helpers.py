"""Shared builders for engine-level and acceptance tests."""

import numpy as np

from pushdp.accountant import PrivacySpec
from pushdp.engine import RunConfig
from pushdp.models import Model, Task, synth_dataset
from pushdp.schedule import build_schedule
from pushdp.topology import graph_schedule


def logistic_task(n, J, d_in=6, data_seed=0, separation=3.0) -> Task:
    model = Model(kind="logistic", d_in=d_in)
    data = synth_dataset(data_seed, n, J, d_in=d_in, classes=2, separation=separation)
    return Task(model=model, dataset=data)


def private_config(
    n,
    J,
    K,
    epsilon,
    variant="const",
    delta=1e-4,
    clip0=2.0,
    rho_c=4.0,
    rho_mu=4.0,
    gamma=0.05,
    seed=0,
    graph="exponential",
    d_in=6,
    data_seed=0,
    separation=3.0,
    **kwargs,
) -> RunConfig:
    task = logistic_task(n, J, d_in=d_in, data_seed=data_seed, separation=separation)
    privacy = PrivacySpec.resolve(epsilon, delta, J, K)
    sched = build_schedule(variant, privacy, clip0=clip0, rho_c=rho_c, rho_mu=rho_mu)
    return RunConfig(
        task=task,
        graph=graph_schedule(graph, n),
        schedule=sched,
        gamma=gamma,
        K=K,
        seed=seed,
        **kwargs,
    )


def nonprivate_config(n, J, K, gamma=0.05, seed=0, graph="exponential", d_in=6, data_seed=0, separation=3.0, **kwargs) -> RunConfig:
    task = logistic_task(n, J, d_in=d_in, data_seed=data_seed, separation=separation)
    return RunConfig(
        task=task,
        graph=graph_schedule(graph, n),
        schedule=None,
        gamma=gamma,
        K=K,
        seed=seed,
        **kwargs,
    )


def reference_single_node_sgd(task, gamma, K, seed, init_scale=0.5):
    """Plain-Python SGD consuming the same streams the engine uses."""
    from pushdp.engine import PURPOSE_INIT, PURPOSE_SAMPLE, node_stream
    from pushdp.models import per_sample_gradient

    model, data = task.model, task.dataset
    x = node_stream(seed, 0, PURPOSE_INIT).standard_normal(model.dim) * init_scale
    sampler = node_stream(seed, 0, PURPOSE_SAMPLE)
    traj = [x.copy()]
    for _ in range(K):
        idx = int(sampler.integers(data.J))
        g = per_sample_gradient(model, x, data.features[0, idx], data.labels[0, idx])
        x = x - gamma * g
        traj.append(x.copy())
    return traj


def final_accuracies(logs) -> np.ndarray:
    return np.array([log.rows[-1].accuracy for log in logs])


def final_losses(logs) -> np.ndarray:
    return np.array([log.rows[-1].loss for log in logs])
