"""End-to-end workcell orchestration: scan, model, plan, sand, assess, re-sand.

The pipeline is deterministic for a fixed config seed: every random stream
(surface texture, sensor noise, planner sampling, GA) is derived from the seed
with stable spawn keys, so two runs write byte-identical CSV logs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import controller as ctl
from . import dynamics as dyn
from . import impedance as imp
from . import planner as pln
from . import pointcloud as pc
from .config import PipelineConfig
from .geometry import ConvexShape, RigidTransform, box, lateral_faces, prism


class PipelineError(Exception):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(*keys) -> int:
    """Stable child seed from integer keys (order-sensitive)."""
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


# --- closed-loop sanding ---------------------------------------------------------

LOG_COLUMNS = (["t"] + [f"q{i}" for i in range(1, 5)] + [f"qd{i}" for i in range(1, 5)]
               + ["x", "y", "phi", "fe_x", "fe_y", "fe_t"]
               + [f"zq{i}" for i in range(1, 5)] + [f"u{i}" for i in range(1, 5)]
               + ["w_norm", "v_obs"])


@dataclass
class SandingSetup:
    """Everything one closed-loop sanding run needs.

    x_d and f_d are constant setpoints; supply ``trajectory`` instead for a
    time-varying reference (it then drives position, feedforward velocity and
    desired force each control step).
    """

    model: dyn.RobotModel
    spec: imp.ImpedanceSpec
    gains: ctl.ControllerGains
    net: ctl.RbfNetwork
    contact: dyn.BeltContact | None
    x_d: np.ndarray
    f_d: np.ndarray
    start: dyn.JointState
    duration: float
    dt_control: float = 1e-3
    dt_physics: float = 1e-4
    force_noise: float = 0.0
    noise_seed: int = 0
    pinv_damping: float = 0.0
    disturbance: object = None      # callable t -> joint torque, or None
    trajectory: imp.ReferenceTrajectory | None = None


@dataclass
class SandingResult:
    times: np.ndarray
    log: np.ndarray                 # one row per control step, LOG_COLUMNS order
    vel_errors: np.ndarray
    mass_matrices: np.ndarray
    forces: np.ndarray
    task_errors: np.ndarray         # composite impedance error z per step
    steady_force: float
    steady_force_error: float
    max_zq_after_transient: float
    mean_zq_tail: float
    monitor: ctl.DescentReport
    final_state: dyn.JointState
    net: ctl.RbfNetwork


def simulate_sanding(setup: SandingSetup, transient: float = 1.0,
                     tail_fraction: float = 0.3) -> SandingResult:
    """Run the adaptive impedance controller against the simulated arm.

    The controller runs at dt_control with zero-order hold; the plant
    integrates at dt_physics.  The measured force is the ideal normal contact
    force plus optional sensor noise; the tangential abrasion drag acts on the
    plant only.
    """
    n_sub = round(setup.dt_control / setup.dt_physics)
    if abs(n_sub - setup.dt_control / setup.dt_physics) > 1e-9 or n_sub < 1:
        raise ValueError("dt_control must be an integer multiple of dt_physics")
    n_ctrl = int(round(setup.duration / setup.dt_control))
    rng = np.random.default_rng(setup.noise_seed)

    state = setup.start
    net = setup.net
    filt = imp.ForceFilterState.zero()
    qdr_prev = None

    log = np.zeros((n_ctrl, len(LOG_COLUMNS)))
    zq_hist = np.zeros((n_ctrl, 4))
    m_hist = np.zeros((n_ctrl, 4, 4))
    f_hist = np.zeros((n_ctrl, 3))
    z_hist = np.zeros((n_ctrl, 3))

    for i in range(n_ctrl):
        ts = dyn.task_state(setup.model, state)
        if setup.contact is not None:
            f_meas = dyn.contact_force(setup.contact, ts)
        else:
            f_meas = np.zeros(3)
        if setup.force_noise > 0.0:
            f_meas = f_meas + rng.standard_normal(3) * setup.force_noise
        if setup.trajectory is not None:
            x_d, xd_dot, _, f_d = setup.trajectory.sample(state.time)
        else:
            x_d, xd_dot, f_d = setup.x_d, np.zeros(3), setup.f_d
        dx = ts.x - x_d
        filt = imp.filter_force_step(filt, f_meas - f_d, setup.spec,
                                     setup.dt_control)
        jac = dyn.jacobian(setup.model, state.q)
        j_pinv = dyn.pseudo_inverse(jac, setup.pinv_damping)
        qdr = ctl.reference_velocity(j_pinv, xd_dot, dx, filt, setup.spec)
        qddr = np.zeros(4) if qdr_prev is None else (qdr - qdr_prev) / setup.dt_control
        qdr_prev = qdr
        zq = ctl.velocity_error(state.qdot, qdr)
        theta = ctl.rbf_activation(net, state.q, state.qdot, qdr, qddr)
        u = ctl.control_law(setup.gains, net, zq, theta, jac.T @ f_meas)
        net = ctl.weight_update(net, theta, zq, setup.dt_control)

        mass, _, _ = dyn.dynamics_terms(setup.model, state.q, state.qdot)
        v_obs = 0.5 * zq @ mass @ zq
        zq_hist[i] = zq
        m_hist[i] = mass
        f_hist[i] = f_meas
        z_hist[i] = imp.impedance_error(dx, ts.xdot, setup.spec, filt)
        log[i] = np.concatenate([
            [state.time], state.q, state.qdot, ts.x, f_meas, zq, u,
            [np.linalg.norm(net.weights), v_obs]])

        tau_ext = setup.disturbance(state.time) if setup.disturbance else None
        for _ in range(n_sub):
            state = dyn.step(setup.model, state, u, setup.contact,
                             setup.dt_physics, external_torque=tau_ext)

    times = log[:, 0]
    tail = times >= (1.0 - tail_fraction) * setup.duration
    after = times >= transient
    normal = setup.contact.normal if setup.contact is not None else np.array([1.0, 0, 0])
    steady_force = float((f_hist[tail] @ normal).mean())
    f_d_end = setup.trajectory.force(times[-1]) if setup.trajectory is not None \
        else setup.f_d
    target = float(f_d_end @ normal)
    zq_norm = np.linalg.norm(zq_hist, axis=1)
    monitor = ctl.lyapunov_monitor(times, zq_hist, m_hist, transient=transient)
    return SandingResult(
        times=times, log=log, vel_errors=zq_hist, mass_matrices=m_hist,
        forces=f_hist, task_errors=z_hist,
        steady_force=steady_force,
        steady_force_error=steady_force - target,
        max_zq_after_transient=float(zq_norm[after].max() if after.any() else zq_norm.max()),
        mean_zq_tail=float(zq_norm[tail].mean()),
        monitor=monitor, final_state=state, net=net)


def write_csv(path, columns, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")


# --- workcell geometry -----------------------------------------------------------

@dataclass
class Workcell:
    """Object mesh, belt obstacle, per-face sanding tasks, planner context."""

    config: PipelineConfig
    mesh: ConvexShape
    face_ids: list
    tasks: list
    belt: ConvexShape
    planner_ctx: pln.PlannerContext


def build_object(config: PipelineConfig) -> ConvexShape:
    return prism(config.object.radii(), config.object.height)


def build_holder() -> ConvexShape:
    return box((0.04, 0.06, 0.04), center=(0.0, -0.13, 0.0))


def face_geometry(mesh: ConvexShape, face: int):
    """(normal angle in the cross-section plane, support distance) of a lateral face."""
    n = mesh.face_normal(face)
    return float(np.arctan2(n[1], n[0])), mesh.face_support(face)


def build_workcell(config: PipelineConfig) -> Workcell:
    mesh = build_object(config)
    faces = lateral_faces(mesh)
    cc = config.contact
    belt_shape = box(cc.belt_size,
                     center=(cc.belt_x + cc.belt_size[0] / 2.0, 0.0, 0.0))
    l1, l2 = config.robot.link_lengths
    tasks = []
    for face in faces:
        psi, support = face_geometry(mesh, face)
        phi = wrap_angle(-psi)
        th1 = th2 = phi / 2.0
        px = cc.belt_x - support
        q_contact = np.array([px - l1 * np.cos(th1) - l2 * np.cos(phi),
                              -l1 * np.sin(th1) - l2 * np.sin(phi),
                              th1, th2])
        q_approach = q_contact.copy()
        q_approach[0] -= config.pipeline.approach_clearance
        tasks.append(pln.SandingTask(face, q_approach, q_contact, (1.0, 0.0, 0.0)))
    ctx = pln.PlannerContext(
        model=config.robot, payload=mesh,
        obstacles=[(belt_shape, RigidTransform.identity())],
        belt_normal=(1.0, 0.0, 0.0),
        task_step=config.planner.task_step,
        retreat_step=config.planner.retreat_step,
        retreat_max=config.planner.retreat_max,
        max_rule_repairs=config.planner.max_rule_repairs,
        sample_budget=config.planner.sample_budget,
        seed=derive_seed(config.sim.seed, 11))
    return Workcell(config, mesh, faces, tasks, belt_shape, ctx)


def build_network(config: PipelineConfig) -> ctl.RbfNetwork:
    lim = config.robot.joint_limits
    v = config.robot.velocity_limits
    lo = np.concatenate([lim[:, 0], -v, -v, -10.0 * v])
    hi = np.concatenate([lim[:, 1], v, v, 10.0 * v])
    return ctl.RbfNetwork.latin_hypercube(
        lo, hi, n_centers=config.control.n_centers,
        seed=derive_seed(config.sim.seed, 23),
        learn_rate=config.control.learn_rate,
        width_scale=config.control.width_scale)


def build_gains(config: PipelineConfig) -> ctl.ControllerGains:
    boundary = config.control.boundary if config.control.boundary > 0 else None
    return ctl.ControllerGains(config.control.vel_gain,
                               config.control.robust_gain, boundary)


def face_contact(config: PipelineConfig, support: float) -> dyn.BeltContact:
    return dyn.BeltContact(plane_offset=config.contact.belt_x - support,
                           stiffness=config.contact.stiffness,
                           damping=config.contact.damping,
                           drag=config.contact.drag)


def face_setpoint(config: PipelineConfig, contact: dyn.BeltContact,
                  phi: float) -> tuple:
    depth = abs(config.setpoint.force) / config.contact.stiffness
    x_d = np.array([contact.plane_offset + depth + config.setpoint.penetration_margin,
                    0.0, phi])
    f_d = np.array([config.setpoint.force, 0.0, 0.0])
    return x_d, f_d


def sanding_phase(config: PipelineConfig, task: pln.SandingTask,
                  duration: float | None = None, noise_seed: int = 0,
                  disturbance=None) -> SandingResult:
    """Closed-loop sanding of one face: press to the force setpoint and hold."""
    mesh = build_object(config)
    _, support = face_geometry(mesh, task.face_id)
    contact = face_contact(config, support)
    phi = task.contact[2] + task.contact[3]
    x_d, f_d = face_setpoint(config, contact, phi)
    setup = SandingSetup(
        model=config.robot, spec=config.impedance, gains=build_gains(config),
        net=build_network(config), contact=contact, x_d=x_d, f_d=f_d,
        start=dyn.JointState(task.contact, np.zeros(4)),
        duration=duration if duration is not None else config.sim.sanding_duration,
        dt_control=config.sim.dt_control, dt_physics=config.sim.dt_physics,
        force_noise=config.control.force_noise, noise_seed=noise_seed,
        pinv_damping=config.control.pinv_damping, disturbance=disturbance)
    return simulate_sanding(setup, config.sim.transient, config.sim.tail_fraction)


def nominal_setup(config: PipelineConfig, duration: float = 10.0,
                  force_noise: float | None = None) -> SandingSetup:
    """Canonical single-contact regulation scenario with the headline setpoints
    (x_d 51.5 mm along the normal, f_d -25 N)."""
    contact = dyn.BeltContact(plane_offset=0.049,
                              stiffness=config.contact.stiffness,
                              damping=config.contact.damping,
                              drag=config.contact.drag)
    l1, l2 = config.robot.link_lengths
    th1 = 0.6
    q0 = np.array([contact.plane_offset - l1 * np.cos(th1) - l2,
                   -l1 * np.sin(th1), th1, -th1])
    x0 = dyn.forward_kinematics(config.robot, q0)
    return SandingSetup(
        model=config.robot, spec=config.impedance, gains=build_gains(config),
        net=build_network(config), contact=contact,
        x_d=np.array([0.0515, x0[1], 0.0]),
        f_d=np.array([config.setpoint.force, 0.0, 0.0]),
        start=dyn.JointState(q0, np.zeros(4)), duration=duration,
        dt_control=config.sim.dt_control, dt_physics=config.sim.dt_physics,
        force_noise=config.control.force_noise if force_noise is None else force_noise,
        noise_seed=derive_seed(config.sim.seed, 31),
        pinv_damping=config.control.pinv_damping)


# --- scanning helpers ------------------------------------------------------------

def scan_params(config: PipelineConfig, roughness, sensor_seed: int) -> pc.ScanParams:
    sc = config.scanner
    return pc.ScanParams(density=sc.density, depth_noise=sc.depth_noise,
                         view_dir=sc.view_dir,
                         surface_seed=derive_seed(config.sim.seed, 5),
                         sensor_seed=sensor_seed, roughness=roughness,
                         intensity_base=sc.intensity_base,
                         intensity_slope=sc.intensity_slope, speckle=sc.speckle)


def field_bounds(config: PipelineConfig):
    r = config.object.mean_radius + config.object.radius_variation \
        + config.scanner.field_margin
    h = config.object.height / 2.0 + config.scanner.field_margin
    return np.array([-r, -r, -h]), np.array([r, r, h])


def scan_view(config: PipelineConfig, mesh: ConvexShape, roughness,
              angle: float, sensor_seed: int) -> pc.PointCloud:
    """One structured-light view of the rotated object plus the static holder."""
    pose = RigidTransform.rotation_z(angle)
    params = scan_params(config, roughness, sensor_seed)
    cloud = pc.synthetic_scan(mesh, pose, params)
    holder = pc.synthetic_scan(build_holder(), RigidTransform.identity(),
                               scan_params(config, 0.0, sensor_seed + 1))
    pts = np.vstack([cloud.points, holder.points])
    inten = np.concatenate([cloud.intensity, holder.intensity])
    return pc.PointCloud(pts, inten, frame_id=f"view@{angle:.3f}")


def crop_to_face(cloud: pc.PointCloud, pose: RigidTransform, mesh: ConvexShape,
                 face: int) -> pc.PointCloud:
    """Points whose closest hull plane is the requested face (object frame)."""
    local = pose.inverse().apply(cloud.points)
    signed = np.stack([local @ mesh.face_normal(i) - mesh.face_support(i)
                       for i in range(len(mesh.faces))], axis=1)
    return cloud.select(signed.argmax(axis=1) == face)


def scan_face(config: PipelineConfig, mesh: ConvexShape, roughness,
              face: int, sensor_seed: int) -> pc.PointCloud:
    """Rescan with the face turned toward the camera, cropped to that face."""
    psi, _ = face_geometry(mesh, face)
    pose = RigidTransform.rotation_z(-psi)
    cloud = pc.synthetic_scan(mesh, pose, scan_params(config, roughness, sensor_seed))
    return crop_to_face(cloud, pose, mesh, face)


# --- reports ---------------------------------------------------------------------

@dataclass
class FaceReport:
    face_id: int
    sequence_position: int
    duration: float
    steady_force: float
    steady_force_error: float
    max_zq_after_transient: float
    quality: pc.QualityReport | None
    resand_count: int
    passed: bool


@dataclass
class RunReport:
    faces: list = field(default_factory=list)
    total_travel_cost: float = 0.0
    wall_time: float = 0.0
    passed: bool = False
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# --- the pipeline ----------------------------------------------------------------

def run_pipeline(config: PipelineConfig, out_dir) -> RunReport:
    """Scan, model, sequence, then sand every face with quality-gated re-sanding.

    Writes PLY/CSV/JSON artifacts under out_dir and returns the report.  On a
    stage failure a partial report (with the error recorded) is still written
    before PipelineError propagates.
    """
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    (out / "faces").mkdir(exist_ok=True)
    (out / "transits").mkdir(exist_ok=True)
    report = RunReport()
    t_start = time.perf_counter()
    try:
        _run_stages(config, out, report)
        report.passed = all(f.passed for f in report.faces)
    except PipelineError as err:
        report.error = str(err)
        raise
    finally:
        report.wall_time = time.perf_counter() - t_start
        (out / "report.json").write_text(report.to_json())
    return report


def _stage(name):
    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as err:
                raise PipelineError(name, err) from err
        return wrapped
    return deco


@_stage("scan")
def _scan_stage(config, cell, roughness, out):
    angles = [2.0 * np.pi * k / config.scanner.n_views
              for k in range(config.scanner.n_views)]
    lo, hi = field_bounds(config)
    scans = []
    for k, angle in enumerate(angles):
        raw = scan_view(config, cell.mesh, roughness, angle,
                        derive_seed(config.sim.seed, 7, k))
        pc.save_ply(raw, out / "scans" / f"view_{k}_raw.ply")
        filtered = pc.field_limits_filter(raw, lo, hi)
        pc.save_ply(filtered, out / "scans" / f"view_{k}.ply")
        scans.append(filtered)
    (out / "scans" / "views.json").write_text(json.dumps(
        {"angles": angles, "files": [f"view_{k}.ply" for k in range(len(angles))]},
        indent=2))
    return scans, angles


@_stage("model")
def _model_stage(config, cell, scans, angles, out):
    model_cloud = pc.merge_scans(scans, angles, icp_params=config.icp,
                                 sor_k=config.sor.k, sor_alpha=config.sor.alpha)
    pc.save_ply(model_cloud, out / "model.ply")
    return model_cloud


@_stage("plan")
def _sequence_stage(config, cell, out):
    home = np.asarray(config.pipeline.home, dtype=float)
    configs = [home] + [t.approach for t in cell.tasks]
    cache = {}

    def transition(i, j):
        if (i, j) not in cache:
            qa = configs[i + 1]
            qb = configs[j + 1]
            if config.planner.straight_line_cost:
                path = pln.Path([qa, qb])
            else:
                path = pln.plan_single_query(cell.planner_ctx, qa, qb)
            cache[(i, j)] = pln.path_cost(path, config.ga.weights)
        return cache[(i, j)]

    result = pln.ga_optimize_sequence(cell.tasks, config.ga, transition)
    n = len(cell.tasks)
    write_csv(out / "cost_matrix.csv",
              [f"to_{t.face_id}" for t in cell.tasks],
              np.vstack([[transition(-1, j) for j in range(n)], result.cost_matrix]))
    write_csv(out / "ga_history.csv", ["best", "mean"],
              np.stack([result.best_history, result.mean_history], axis=1))
    (out / "sequence.json").write_text(json.dumps(
        {"order": [cell.tasks[i].face_id for i in result.order],
         "total_cost": result.total_cost}, indent=2))
    return result


@_stage("sand")
def _sand_face(config, cell, task, attempt, out):
    seed = derive_seed(config.sim.seed, 13, task.face_id, attempt)
    result = sanding_phase(config, task, noise_seed=seed)
    write_csv(out / "faces" / f"face{task.face_id:02d}_attempt{attempt}.csv",
              LOG_COLUMNS, result.log)
    return result


@_stage("assess")
def _assess_face(config, cell, task, attempt, rough_before, rough_after):
    rb = _roughness_array(cell, rough_before)
    ra = _roughness_array(cell, rough_after)
    cloud_b = scan_face(config, cell.mesh, rb, task.face_id,
                        derive_seed(config.sim.seed, 17, task.face_id, attempt, 0))
    cloud_a = scan_face(config, cell.mesh, ra, task.face_id,
                        derive_seed(config.sim.seed, 17, task.face_id, attempt, 1))
    return pc.assess_quality(cloud_b, cloud_a, config.quality)


def _roughness_array(cell: Workcell, by_face: dict) -> np.ndarray:
    arr = np.zeros(len(cell.mesh.faces))
    for face, value in by_face.items():
        arr[face] = value
    return arr


def _run_stages(config: PipelineConfig, out, report: RunReport) -> None:
    cell = build_workcell(config)
    roughness = {f: config.object.roughness for f in cell.face_ids}

    scans, angles = _scan_stage(config, cell, _roughness_array(cell, roughness), out)
    _model_stage(config, cell, scans, angles, out)
    seq = _sequence_stage(config, cell, out)
    report.total_travel_cost = seq.total_cost

    home = np.asarray(config.pipeline.home, dtype=float)
    current = home
    queue = [cell.tasks[i] for i in seq.order]
    attempts = {t.face_id: 0 for t in cell.tasks}
    face_reports = {}
    position = {cell.tasks[i].face_id: k for k, i in enumerate(seq.order)}
    leg = 0

    while queue:
        task = queue.pop(0)
        attempt = attempts[task.face_id]
        transit = _plan_transit(config, cell, current, task.approach)
        traj = pln.lspb_parameterize(transit, config.robot.velocity_limits,
                                     config.robot.acceleration_limits,
                                     config.planner.sample_dt)
        write_csv(out / "transits" / f"leg{leg:02d}_face{task.face_id:02d}.csv",
                  ["t"] + [f"q{i}" for i in range(1, 5)]
                  + [f"qd{i}" for i in range(1, 5)]
                  + [f"qdd{i}" for i in range(1, 5)],
                  np.hstack([traj.times[:, None], traj.positions,
                             traj.velocities, traj.accelerations]))
        leg += 1
        current = task.approach

        rough_before = dict(roughness)
        result = _sand_face(config, cell, task, attempt, out)
        target = config.setpoint.force
        grip = min(max(result.steady_force / target, 0.0), 1.0)
        roughness[task.face_id] *= (1.0 - config.object.removal_rate * grip)

        quality = _assess_face(config, cell, task, attempt,
                               rough_before, roughness)
        passed = quality.passed or not config.pipeline.quality_gate
        face_reports[task.face_id] = FaceReport(
            face_id=task.face_id, sequence_position=position[task.face_id],
            duration=config.sim.sanding_duration,
            steady_force=result.steady_force,
            steady_force_error=result.steady_force_error,
            max_zq_after_transient=result.max_zq_after_transient,
            quality=quality, resand_count=attempt, passed=passed)
        if not passed and attempt < config.pipeline.max_resand:
            attempts[task.face_id] += 1
            queue.append(task)

    report.faces = [face_reports[t.face_id] for t in cell.tasks]


@_stage("plan")
def _plan_transit(config, cell, q_from, q_to):
    return pln.plan_single_query(cell.planner_ctx, q_from, q_to)
