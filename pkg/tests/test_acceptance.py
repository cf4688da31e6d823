"""Release acceptance suite.

Every check prints one ``[PASS]``/``[FAIL]`` line with its wall time, so
the pytest log doubles as the release report.  The heavy Monte Carlo
results are shared through module-scoped fixtures; the receiver-offset
variant reruns the same statistical predicates over a misaligned channel.
"""

import contextlib
import time

import numpy as np
import pytest

from balanced_oac import (
    BalancedConfig,
    ChannelConfig,
    LearnConfig,
    LinkConfig,
    average_numerals,
    cell_objective,
    decode,
    default_t_sync,
    encode,
    make_model,
    monte_carlo_mse,
    partition_heterogeneous_concentric,
    partition_homogeneous,
    relaxed_exact_agreement,
    step_size,
    stream,
    synthetic_dataset,
    train,
)
from balanced_oac.rng import ROLE_PROFILE

MC_TRIALS = 1_000_000
REF_CODEC = BalancedConfig(5, 2, 0.1)
EX3_CODEC = BalancedConfig(5, 3, 1.0)
EX3_GRADIENTS = np.array([0.28, -0.86])
#: Var of the decoded two-device estimate at R=25, SNR 20 dB, derived twice
#: (per-cell closed form chained by hand and exact-fraction arithmetic).
EX3_VARIANCE = 0.008538841538761704


@contextlib.contextmanager
def gate(capsys, number: int, title: str):
    """Run a criterion body; print exactly one pass/fail line for it."""
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException:
        with capsys.disabled():
            print(f"\n[FAIL] criterion {number}: {title}")
        raise
    dt = time.perf_counter() - t0
    detail = info.get("detail", "")
    sep = "; " if detail else ""
    with capsys.disabled():
        print(f"\n[PASS] criterion {number}: {title}{sep}{detail} ({dt:.1f}s)")


def build_suite(offset: bool) -> dict:
    """All Monte Carlo runs the statistical criteria share.

    ``offset`` switches on the 3-sample receiver window error plus random
    per-device arrival delays; received energies are invariant under the
    induced phase rotations, so the same predicates must pass either way.
    """
    t0 = time.perf_counter()
    sync_kw = (
        {"sync_error_samples": 3.0, "t_sync": default_t_sync(1200)}
        if offset
        else {}
    )

    def channel(antennas, devices=25, noise_var=0.01):
        return ChannelConfig(
            num_devices=devices,
            num_antennas=antennas,
            noise_var=noise_var,
            **sync_kw,
        )

    suite = {"offset": offset}
    profiles = stream(0, ROLE_PROFILE).uniform(-0.1, 0.1, size=(25, 10))
    suite["recovery"] = {
        r: monte_carlo_mse(
            REF_CODEC, profiles, channel(r), trials=MC_TRIALS, seed=0
        )
        for r in (1, 25)
    }
    # Single-digit profiles whose per-cell device counts cover 0, 1, 2, 22
    # and 25; grid values at +-v_max/2 and +-v_max hit each symbol exactly.
    single = BalancedConfig(5, 1, 1.0)
    mixed = np.concatenate([np.full(1, 0.5), np.full(2, -0.5), np.full(22, 1.0)])
    solo = np.full(25, 0.5)
    suite["cells"] = {
        (name, r): monte_carlo_mse(
            single, g, channel(r), trials=MC_TRIALS, seed=0
        )
        for name, g in (("mixed", mixed), ("solo", solo))
        for r in (1, 25)
    }
    suite["example3"] = monte_carlo_mse(
        EX3_CODEC, EX3_GRADIENTS, channel(25, devices=2), trials=MC_TRIALS, seed=0
    )
    # Bias-dominated instance: one occupied cell, no noise, many antennas,
    # so the residual MSE above the variance is almost purely the squared
    # quantization bias (0.25^2 against a variance of 1/2048).
    suite["resolvable"] = monte_carlo_mse(
        BalancedConfig(3, 1, 1.0),
        np.array([0.3, -0.8]),
        channel(512, devices=2, noise_var=0.0),
        trials=MC_TRIALS,
        seed=0,
    )
    suite["seconds"] = time.perf_counter() - t0
    return suite


@pytest.fixture(scope="module")
def suite_aligned():
    return build_suite(offset=False)


@pytest.fixture(scope="module")
def suite_offset():
    return build_suite(offset=True)


def check_recovery(suite) -> float:
    """Estimator mean equals the quantized average within 3 jackknife SEs."""
    worst = 0.0
    for antennas, rep in suite["recovery"].items():
        z = np.abs(rep.emp_mean - rep.quantized_average) / rep.emp_mean_se
        worst = max(worst, float(z.max()))
        assert np.all(z <= 3.0), (
            f"R={antennas}: mean is {z.max():.2f} SEs from the quantized average"
        )
    return worst


def check_cell_variances(suite):
    """Per-cell and gradient-level variances match closed forms within 3%."""
    want_votes = {"mixed": [1, 2, 22, 0], "solo": [25, 0, 0, 0]}
    worst = 0.0
    for (name, antennas), rep in suite["cells"].items():
        np.testing.assert_array_equal(rep.vote_counts[0, 0], want_votes[name])
        rel = np.abs(rep.emp_vote_var - rep.theory_vote_var) / rep.theory_vote_var
        worst = max(worst, float(rel.max()))
        assert np.all(rel <= 0.03), (
            f"{name}, R={antennas}: worst cell variance off by {rel.max():.4f}"
        )
    rep = suite["example3"]
    assert rep.theory_var[0] == pytest.approx(EX3_VARIANCE, rel=1e-12)
    rel_gradient = abs(rep.emp_var[0] - rep.theory_var[0]) / rep.theory_var[0]
    assert rel_gradient <= 0.03, f"gradient variance off by {rel_gradient:.4f}"
    return worst, rel_gradient


def check_mse_decomposition(suite):
    """MSE = variance + squared quantization bias, exactly and empirically."""
    rep = suite["example3"]
    bias = rep.quantized_average[0] - rep.true_average[0]
    assert bias == pytest.approx(-1 / 3100, rel=1e-9)
    assert rep.theory_bias2[0] == pytest.approx((1 / 3100) ** 2, rel=1e-9)
    np.testing.assert_allclose(
        (rep.quantized_average - rep.true_average) ** 2,
        rep.theory_bias2,
        rtol=1e-9,
    )
    z = abs(rep.emp_mse[0] - rep.theory_mse[0]) / rep.emp_mse_se[0]
    assert z <= 3.0, f"MSE is {z:.2f} SEs from variance + bias^2"
    rb = suite["resolvable"]
    assert rb.theory_bias2[0] == pytest.approx(0.0625, rel=1e-12)
    residual = rb.emp_mse[0] - rb.theory_var[0]
    rel = abs(residual - rb.theory_bias2[0]) / rb.theory_bias2[0]
    assert rel <= 0.10, f"MSE residual is {rel:.4f} off the squared bias"
    return z, rel


class TestAcceptance:
    def test_criterion_1_codec_worked_examples(self, capsys):
        with gate(capsys, 1, "codec worked examples are bit-exact") as info:
            np.testing.assert_array_equal(encode(EX3_CODEC, 0.28), [1, -2, 2])
            np.testing.assert_array_equal(encode(EX3_CODEC, -0.86), [-2, -1, 2])
            assert decode(EX3_CODEC, [1, -2, 2]) == 17 / 62
            assert decode(EX3_CODEC, [-2, -1, 2]) == -53 / 62
            mean_numerals = average_numerals(
                encode(EX3_CODEC, EX3_GRADIENTS[:, None])
            )
            np.testing.assert_array_equal(mean_numerals, [[-0.5, -1.5, 2.0]])
            averaged = decode(EX3_CODEC, mean_numerals)[0]
            assert averaged == -18 / 62
            assert averaged == pytest.approx(-0.2903, abs=5e-5)
            assert step_size(EX3_CODEC) == 2 / 124
            info["detail"] = "encode/decode/average all exact"

    def test_criterion_2_round_trip_bound(self, capsys):
        with gate(capsys, 2, "round-trip error is at most half a step") as info:
            rng = np.random.default_rng(20260823)
            v_maxes = (1.0, 0.1, 2.5)
            cases, combo, worst = 0, 0, 0.0
            for base in (3, 5, 7, 9, 11):
                for digits in (1, 2, 3, 4):
                    cfg = BalancedConfig(base, digits, v_maxes[combo % 3])
                    combo += 1
                    half = cfg.step / 2
                    values = rng.uniform(
                        -(cfg.v_max - half), cfg.v_max - half, size=5000
                    )
                    err = np.abs(decode(cfg, encode(cfg, values)) - values)
                    assert np.all(err <= half + 1e-12), (
                        f"base {base}, digits {digits}: {err.max():.3e} > {half:.3e}"
                    )
                    worst = max(worst, float(err.max() / half))
                    cases += values.size
            assert cases == 100_000
            info["detail"] = f"{cases} draws, worst error {worst:.3f} of the bound"

    def test_criterion_3_estimator_recovers_quantized_average(
        self, capsys, suite_aligned
    ):
        with gate(
            capsys, 3, "estimator mean recovers the quantized average"
        ) as info:
            worst = check_recovery(suite_aligned)
            info["detail"] = (
                f"10 profiles x R in (1, 25), {MC_TRIALS} trials, "
                f"worst offset {worst:.2f} SE "
                f"(suite build {suite_aligned['seconds']:.0f}s)"
            )

    def test_criterion_4_variance_closed_forms(self, capsys, suite_aligned):
        with gate(capsys, 4, "variances match closed forms within 3%") as info:
            worst_cell, rel_gradient = check_cell_variances(suite_aligned)
            info["detail"] = (
                f"cell counts (0,1,2,22,25) x R in (1,25) worst {worst_cell:.4f}, "
                f"two-device gradient variance off {rel_gradient:.4f}"
            )

    def test_criterion_5_mse_decomposition(self, capsys, suite_aligned):
        with gate(
            capsys, 5, "MSE decomposes into variance plus squared bias"
        ) as info:
            z, rel = check_mse_decomposition(suite_aligned)
            info["detail"] = (
                f"canonical instance {z:.2f} SE, bias-dominated residual "
                f"within {rel:.4f} of the squared bias"
            )

    def test_criterion_6_exact_vs_relaxed_detection(self, capsys):
        with gate(
            capsys, 6, "relaxed optimum is stationary; exact search agrees"
        ) as info:
            energy_scale, noise, antennas = 2.0, 1e-4, 8
            rng = np.random.default_rng(61)
            energy = rng.uniform(2.0, 40.0, size=200) * antennas
            kappa = energy / (energy_scale * antennas) - noise / energy_scale
            f0 = cell_objective(energy, kappa, energy_scale, noise, antennas)
            for delta in (1e-3, 0.1, 0.5):
                for sign in (1.0, -1.0):
                    moved = cell_objective(
                        energy, kappa + sign * delta, energy_scale, noise, antennas
                    )
                    assert np.all(moved > f0)
            h = 1e-3
            deriv = (
                cell_objective(energy, kappa + h, energy_scale, noise, antennas)
                - cell_objective(energy, kappa - h, energy_scale, noise, antennas)
            ) / (2 * h)
            # central differences leave O(f''' h^2) truncation noise
            assert np.max(np.abs(deriv)) < 1e-4

            # Agreement scores whole digit groups (every cell must match);
            # regression floors sit just under the calibration run's rates.
            # Joint patterns disagree mostly through fading concentration
            # at 8 antennas, so the rate drops as more cells are occupied.
            codec = BalancedConfig(3, 1, 1.0)
            floors = {1: 0.95, 3: 0.90, 5: 0.81}
            rates = {}
            for devices, floor in floors.items():
                gradients = np.random.default_rng(100 + devices).uniform(
                    -1.0, 1.0, size=devices
                )
                chan = ChannelConfig(
                    num_devices=devices, num_antennas=antennas, noise_var=noise
                )
                rates[devices] = relaxed_exact_agreement(
                    codec, gradients, chan, trials=10_000, seed=5
                )
                assert rates[devices] >= floor, (
                    f"K={devices}: agreement {rates[devices]:.4f} < {floor}"
                )
            mean_rate = float(np.mean(list(rates.values())))
            assert mean_rate >= 0.88
            info["detail"] = (
                "stationary on 200 draws; agreement "
                + ", ".join(f"K={k}: {r:.3f}" for k, r in rates.items())
                + f", mean {mean_rate:.3f}"
            )

    def test_criterion_7_offset_robustness(self, capsys, suite_offset):
        with gate(
            capsys, 7, "statistical criteria hold under receiver offset"
        ) as info:
            worst_z = check_recovery(suite_offset)
            worst_cell, rel_gradient = check_cell_variances(suite_offset)
            z, rel = check_mse_decomposition(suite_offset)
            info["detail"] = (
                f"3-sample window error + random delays: recovery {worst_z:.2f} SE, "
                f"cell variances {worst_cell:.4f}, gradient {rel_gradient:.4f}, "
                f"decomposition {z:.2f} SE / {rel:.4f} "
                f"(suite build {suite_offset['seconds']:.0f}s)"
            )

    def test_criterion_8_linked_training(self, capsys):
        with gate(
            capsys, 8, "linked training tracks ideal aggregation"
        ) as info:

            def run(mode, seed, *, codec=REF_CODEC, classes=2, antennas=1,
                    hetero=False):
                train_set, test_set = synthetic_dataset(classes=classes, seed=seed)
                part_fn = (
                    partition_heterogeneous_concentric
                    if hetero
                    else partition_homogeneous
                )
                partition = part_fn(train_set.y, 25, seed)
                model = make_model(train_set.x.shape[1], train_set.num_classes)
                link = LinkConfig(
                    codec=codec,
                    channel=ChannelConfig(
                        num_devices=25, num_antennas=antennas, noise_var=0.01
                    ),
                    mode=mode,
                )
                return train(
                    model, train_set, test_set, partition, link, LearnConfig(),
                    seed,
                )

            # (a) single-antenna linked training keeps >= 95% of the ideal
            # final accuracy, averaged over five paired seeds
            ratios = []
            for seed in range(5):
                ideal = run("ideal", seed)[-1].accuracy
                linked = run("oac", seed)[-1].accuracy
                ratios.append(linked / ideal)
            mean_ratio = float(np.mean(ratios))
            assert mean_ratio >= 0.95, f"accuracy ratio {mean_ratio:.4f}"

            # (b) the label-skewed partition stays within 5 points of the
            # homogeneous one over an error-free link
            homo = run("ideal", 0, classes=10)[-1].accuracy
            het = run("ideal", 0, classes=10, hetero=True)[-1].accuracy
            gap_points = abs(homo - het) * 100
            assert gap_points <= 5.0, f"partition gap {gap_points:.2f} points"

            # (c) refining the codec does not widen the training gap; at 25
            # antennas quantization dominates, so the trend is visible
            gaps = []
            for base, digits in ((3, 1), (5, 2), (7, 2)):
                codec = BalancedConfig(base, digits, 0.1)
                per_seed = []
                for seed in (0, 1, 2):
                    ideal = run("ideal", seed, codec=codec, antennas=25)
                    linked = run("oac", seed, codec=codec, antennas=25)
                    acc_i = np.mean([r.accuracy for r in ideal[-10:]])
                    acc_o = np.mean([r.accuracy for r in linked[-10:]])
                    per_seed.append(acc_i - acc_o)
                gaps.append(float(np.mean(per_seed)))
            assert gaps[1] <= gaps[0] and gaps[2] <= gaps[1], f"gaps {gaps}"

            info["detail"] = (
                f"accuracy ratio {mean_ratio:.3f}, partition gap "
                f"{gap_points:.1f} pts, codec gaps "
                + " >= ".join(f"{g:.4f}" for g in gaps)
            )
