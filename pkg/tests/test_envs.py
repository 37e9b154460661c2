"""Tests for the desk-scale environments and the remote-environment client."""

import json
import socket
import socketserver
import threading

import numpy as np
import pytest

from flowrl.envs import (EnvSpec, GmmBandit, GmmBanditSpec, Pendulum,
                         PointMass, ProtocolError, RemoteEnv, make_env)


class TestEnvSpec:
    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            EnvSpec(state_dim=0, action_dim=1, action_low=np.array([-1.0]),
                    action_high=np.array([1.0]), max_episode_steps=10)

    def test_rejects_mismatched_bounds(self):
        with pytest.raises(ValueError):
            EnvSpec(state_dim=1, action_dim=2, action_low=np.array([-1.0]),
                    action_high=np.array([1.0]), max_episode_steps=10)

    def test_rejects_crossed_bounds(self):
        with pytest.raises(ValueError):
            EnvSpec(state_dim=1, action_dim=1, action_low=np.array([1.0]),
                    action_high=np.array([-1.0]), max_episode_steps=10)


class TestPendulum:
    def test_observation_lies_on_unit_circle(self):
        env = Pendulum()
        obs = env.reset(np.random.default_rng(0))
        assert obs.shape == (3,)
        assert obs[0] ** 2 + obs[1] ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_upright_rest_is_an_equilibrium(self):
        env = Pendulum()
        env.reset(np.random.default_rng(0))
        env.theta, env.omega = 0.0, 0.0
        obs, reward, terminal = env.step(np.array([0.0]))
        assert env.theta == 0.0 and env.omega == 0.0
        assert reward == 0.0
        assert terminal is False

    def test_reward_is_nonpositive_and_penalizes_angle(self):
        env = Pendulum()
        env.reset(np.random.default_rng(1))
        env.theta, env.omega = np.pi, 0.0
        _, r_bottom, _ = env.step(np.array([0.0]))
        env.theta, env.omega = 0.1, 0.0
        _, r_top, _ = env.step(np.array([0.0]))
        assert r_bottom < r_top <= 0.0

    def test_torque_is_clipped_to_bounds(self):
        env = Pendulum()
        env.reset(np.random.default_rng(2))
        env.theta, env.omega = 0.5, 0.0
        env2 = Pendulum()
        env2.theta, env2.omega = 0.5, 0.0
        o1, r1, _ = env.step(np.array([100.0]))
        o2, r2, _ = env2.step(np.array([2.0]))
        np.testing.assert_array_equal(o1, o2)
        assert r1 == r2

    def test_passive_energy_stays_bounded(self):
        """Semi-implicit Euler is symplectic: the undriven pendulum's energy
        error oscillates but shows no secular drift over a long rollout."""
        env = Pendulum()
        env.reset(np.random.default_rng(3))
        env.theta, env.omega = 2.0, 0.0  # swings without saturating MAX_SPEED
        e0 = env.energy()
        energies = []
        for _ in range(2000):
            env.step(np.array([0.0]))
            energies.append(env.energy())
        energies = np.array(energies)
        assert np.max(np.abs(energies - e0)) < 0.15 * e0
        early = energies[:500].mean()
        late = energies[-500:].mean()
        assert abs(late - early) / e0 < 0.02

    def test_angular_speed_is_limited(self):
        env = Pendulum()
        env.reset(np.random.default_rng(4))
        for _ in range(300):
            env.step(np.array([2.0]))
        assert abs(env.omega) <= env.MAX_SPEED


class TestGmmBanditSpec:
    def test_component_means_on_circle(self):
        gmm = GmmBanditSpec()
        mus = gmm.component_means()
        assert mus.shape == (10, 2)
        np.testing.assert_allclose(np.linalg.norm(mus, axis=1), 10.0, rtol=1e-12)
        np.testing.assert_allclose(mus[0], [10.0, 0.0], atol=1e-12)

    def test_log_density_matches_explicit_sum(self):
        gmm = GmmBanditSpec()
        pts = np.random.default_rng(0).uniform(-12, 12, (20, 2))
        mus = gmm.component_means()
        expected = np.log(np.mean(
            [np.exp(-0.5 * np.sum((pts - mu) ** 2, axis=1)) / (2 * np.pi)
             for mu in mus], axis=0))
        np.testing.assert_allclose(gmm.log_density(pts), expected, atol=1e-12)

    def test_log_density_scalar_form(self):
        gmm = GmmBanditSpec()
        p = np.array([1.0, 2.0])
        assert gmm.log_density(p) == pytest.approx(gmm.log_density(p[None, :])[0])

    def test_samples_concentrate_near_modes(self):
        gmm = GmmBanditSpec()
        pts = gmm.sample(2000, np.random.default_rng(5))
        mus = gmm.component_means()
        d = np.min(np.linalg.norm(pts[:, None, :] - mus[None], axis=2), axis=1)
        assert np.mean(d < 3.0) > 0.95

    def test_toy_q_gap_values(self):
        gmm = GmmBanditSpec()
        center = np.asarray(gmm.q_gap_center)
        assert gmm.toy_q_gap(center) == pytest.approx(3.0)
        # offset - scale * d^2 crosses zero at d^2 = 1800
        far = center + np.array([np.sqrt(1800.0), 0.0])
        assert gmm.toy_q_gap(far) == pytest.approx(0.0, abs=1e-12)
        probe = center + np.array([5.0, 5.0])
        assert gmm.toy_q_gap(probe) == pytest.approx(3.0 - 50.0 / 600.0)

    def test_toy_q_gap_peaks_between_the_two_top_modes(self):
        gmm = GmmBanditSpec()
        mus = gmm.component_means()
        gaps = gmm.toy_q_gap(mus)
        best_two = np.argsort(gaps)[-2:]
        angles = np.sort(np.degrees(np.arctan2(mus[best_two, 1], mus[best_two, 0])))
        np.testing.assert_allclose(angles, [72.0, 108.0], atol=1e-9)


class TestGmmBandit:
    def test_episode_is_single_step(self):
        env = GmmBandit()
        state = env.reset(np.random.default_rng(0))
        np.testing.assert_array_equal(state, [0.0])
        next_state, reward, terminal = env.step(np.array([10.0, 0.0]))
        assert terminal is True
        assert reward == pytest.approx(env.gmm.log_density(np.array([10.0, 0.0])))

    def test_best_action_value_beats_random_probes(self):
        env = GmmBandit()
        best = env.best_action_value()
        pts = np.random.default_rng(1).uniform(-14, 14, (5000, 2))
        assert best >= np.max(env.gmm.log_density(pts)) - 1e-9

    def test_actions_outside_bounds_are_clipped(self):
        env = GmmBandit()
        env.reset(np.random.default_rng(0))
        _, r_clipped, _ = env.step(np.array([100.0, 0.0]))
        _, r_edge, _ = env.step(np.array([14.0, 0.0]))
        assert r_clipped == r_edge


class TestPointMass:
    def test_reset_state_is_origin_at_rest(self):
        env = PointMass()
        np.testing.assert_array_equal(env.reset(np.random.default_rng(0)),
                                      np.zeros(4))

    def test_double_integrator_kinematics(self):
        env = PointMass()
        env.reset(np.random.default_rng(0))
        state, _, terminal = env.step(np.array([1.0, 0.0]))
        np.testing.assert_allclose(state, [0.01, 0.0, 0.1, 0.0], atol=1e-12)
        assert terminal is False

    def test_reward_field_is_mirror_symmetric(self):
        env = PointMass()
        for p in np.random.default_rng(2).uniform(-6, 6, (20, 2)):
            mirrored = p * np.array([-1.0, 1.0])
            assert env.reward_at(p) == pytest.approx(env.reward_at(mirrored))

    def test_reward_peaks_at_goals(self):
        env = PointMass()
        at_goal = env.reward_at(np.array([5.0, 0.0]))
        elsewhere = env.reward_at(np.array([0.0, 0.0]))
        assert at_goal > elsewhere


class TestMakeEnv:
    @pytest.mark.parametrize("name,cls", [("pendulum", Pendulum),
                                          ("gmm-bandit", GmmBandit),
                                          ("point-mass", PointMass)])
    def test_registry(self, name, cls):
        assert isinstance(make_env(name), cls)

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown environment"):
            make_env("cartpole")


class _ScriptedHandler(socketserver.StreamRequestHandler):
    """Minimal wire-protocol server: a 1D env whose state is the running sum
    of actions; used to exercise the client."""

    def handle(self):
        state = 0.0
        while True:
            line = self.rfile.readline()
            if not line:
                return
            msg = json.loads(line)
            cmd = msg["cmd"]
            if cmd == "spec":
                reply = {"state_dim": 1, "action_dim": 1,
                         "action_low": [-1.0], "action_high": [1.0],
                         "max_episode_steps": 10}
            elif cmd == "reset":
                state = float(msg["seed"] % 7)
                reply = {"state": [state]}
            elif cmd == "step":
                if self.server.misbehave:
                    self.wfile.write(b"this is not json\n")
                    continue
                state += msg["action"][0]
                reply = {"state": [state], "reward": -abs(state),
                         "terminal": False}
            elif cmd == "close":
                return
            else:
                reply = {"error": f"unknown command {cmd!r}"}
            self.wfile.write((json.dumps(reply) + "\n").encode())


@pytest.fixture
def wire_server():
    server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), _ScriptedHandler)
    server.misbehave = False
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


class TestRemoteEnv:
    def test_spec_comes_from_host(self, wire_server):
        env = RemoteEnv("127.0.0.1", wire_server.server_address[1])
        assert env.spec.state_dim == 1
        assert env.spec.max_episode_steps == 10
        np.testing.assert_array_equal(env.spec.action_high, [1.0])
        env.close()

    def test_reset_and_step_roundtrip(self, wire_server):
        env = RemoteEnv("127.0.0.1", wire_server.server_address[1])
        state = env.reset(np.random.default_rng(0))
        assert state.shape == (1,)
        next_state, reward, terminal = env.step(np.array([0.5]))
        assert next_state[0] == pytest.approx(state[0] + 0.5)
        assert reward == pytest.approx(-abs(next_state[0]))
        assert terminal is False
        env.close()

    def test_client_clips_before_sending(self, wire_server):
        env = RemoteEnv("127.0.0.1", wire_server.server_address[1])
        state = env.reset(np.random.default_rng(1))
        next_state, _, _ = env.step(np.array([100.0]))
        assert next_state[0] == pytest.approx(state[0] + 1.0)
        env.close()

    def test_unknown_command_maps_to_protocol_error(self, wire_server):
        env = RemoteEnv("127.0.0.1", wire_server.server_address[1])
        with pytest.raises(ProtocolError, match="host error"):
            env._request({"cmd": "launch"})
        env.close()

    def test_malformed_reply_raises(self, wire_server):
        env = RemoteEnv("127.0.0.1", wire_server.server_address[1])
        env.reset(np.random.default_rng(0))
        wire_server.misbehave = True
        with pytest.raises(ProtocolError, match="malformed"):
            env.step(np.array([0.1]))
        env.close()

    def test_make_env_remote_address(self, wire_server):
        env = make_env(f"remote:127.0.0.1:{wire_server.server_address[1]}")
        assert isinstance(env, RemoteEnv)
        env.close()
