"""Named scenario presets (overrides on top of :class:`ScenarioConfig` defaults)."""

PRESETS = {
    # Four UAVs cross a field of eight obstacles on two rings. Obstacle centers
    # come from ceiling cameras: range-independent noise, one shared track each.
    "paper-avoidance": {
        "name": "paper-avoidance",
        "n_uavs": 4, "n_obstacles": 8, "T": 0.01, "horizon": 4, "duration": 35.0,
        "r_rob": 0.1125, "r_obs": 0.1125, "v_bar": 0.2, "w_bar": 0.6,
        "r_cl": 0.9, "r_init": 3.5, "r_ref": 0.5,
        "obstacle_kind": "two-ring", "obstacle_ring_radii": (2.5, 1.5),
        "obstacle_r_cov": 0.3, "obstacle_alpha_rate": 0.15,
        "noise_source": "camera", "noise_sigma0": 0.002, "noise_kappa": 0.0,
    },
    # Three stationary UAVs track one obstacle with range-dependent noise.
    "paper-prediction": {
        "name": "paper-prediction",
        "n_uavs": 3, "n_obstacles": 1, "T": 0.01, "horizon": 4, "duration": 35.0,
        "r_init": 3.5, "r_sense": 10.0, "prediction_only": True,
        "obstacle_kind": "circular", "obstacle_path_radius": 1.0, "obstacle_omega": 0.3,
        "noise_source": "uav", "noise_sigma0": 0.01, "noise_kappa": 0.05,
    },
    "paper-prediction-figure8": {
        "name": "paper-prediction-figure8",
        "n_uavs": 3, "n_obstacles": 1, "T": 0.01, "horizon": 4, "duration": 35.0,
        "r_init": 3.5, "r_sense": 10.0, "prediction_only": True,
        "obstacle_kind": "figure-eight", "obstacle_lemniscate_a": 1.5, "obstacle_omega": 0.3,
        "noise_source": "uav", "noise_sigma0": 0.01, "noise_kappa": 0.05,
    },
    "paper-prediction-butterfly": {
        "name": "paper-prediction-butterfly",
        "n_uavs": 3, "n_obstacles": 1, "T": 0.01, "horizon": 4, "duration": 35.0,
        "r_init": 3.5, "r_sense": 10.0, "prediction_only": True,
        "obstacle_kind": "butterfly3d", "obstacle_butterfly_scale": 1.5,
        "obstacle_butterfly_z": 0.3, "obstacle_omega": 0.3, "koopman_dims": 3,
        "noise_source": "uav", "noise_sigma0": 0.01, "noise_kappa": 0.05,
    },
}
