import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from conftest import front_camera
from oracles import brute_diameter, brute_first_hit, world_triangles
from reflnbv.bvh import BACKENDS
from reflnbv.geometry import PinholeCamera, RigidPose, StereoRig
from reflnbv.mesh import TriangleMesh, bent_plate, box, icosphere, mesh_diameter, plate
from reflnbv.scene import MISS, SceneInstance, SceneModel, estimate_normals_pca, raycast_view

rotvecs = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)
vecs = st.lists(st.floats(-100.0, 100.0), min_size=3, max_size=3)


# -- poses and cameras -----------------------------------------------------

def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        RigidPose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidPose(2 * np.eye(3))


@given(rotvecs, vecs, st.lists(vecs, min_size=1, max_size=5))
def test_pose_inverse_roundtrip(rv, t, pts):
    pose = RigidPose.from_rotvec(rv, t)
    p = np.array(pts)
    np.testing.assert_allclose(pose.inverse().apply(pose.apply(p)), p, atol=1e-9)
    np.testing.assert_allclose((pose @ pose.inverse()).matrix, np.eye(4), atol=1e-12)


def test_look_at_points_optical_axis_at_target():
    pose = RigidPose.look_at((100.0, -50.0, 300.0), (10.0, 5.0, 0.0))
    z = pose.rotation[:, 2]
    d = np.array([10.0, 5.0, 0.0]) - pose.translation
    np.testing.assert_allclose(z, d / np.linalg.norm(d), atol=1e-12)


def test_camera_validation():
    with pytest.raises(ValueError):
        PinholeCamera(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        PinholeCamera(1.0, 1.0, 5.0, 1.0, 4, 4)


def test_project_backproject_roundtrip(camera):
    rng = np.random.default_rng(0)
    depth = rng.uniform(200, 800, camera.shape)
    pts = camera.backproject(depth)
    u, v, z = camera.project(pts)
    gu, gv = camera.pixel_grid()
    np.testing.assert_allclose(u, gu, atol=1e-9)
    np.testing.assert_allclose(v, gv, atol=1e-9)
    np.testing.assert_allclose(z, depth, rtol=1e-12)


def test_stereo_rig_invariants():
    with pytest.raises(ValueError):
        StereoRig.standard(baseline=0.0)
    with pytest.raises(ValueError):
        StereoRig.standard(projector_intensity=0.0)
    rig = StereoRig.standard(baseline=60.0)
    moved = rig.placed(RigidPose.from_euler((10, 20, 30), (1, 2, 3)))
    assert np.linalg.norm(moved.left.center - moved.right.center) == pytest.approx(60.0)
    assert rig.dark().projector_intensity == 0.0


# -- meshes ----------------------------------------------------------------

def test_mesh_rejects_bad_index_and_drops_degenerate():
    with pytest.raises(ValueError):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]])
    assert len(m) == 1


def test_diameter_examples():
    cube = box((1.0, 1.0, 1.0))
    assert mesh_diameter(cube) == pytest.approx(math.sqrt(3), abs=1e-12)
    two = TriangleMesh([[0, 0, 0], [10, 0, 0]], np.empty((0, 3)))
    assert mesh_diameter(two) == pytest.approx(10.0)
    s = 1 / math.sqrt(2)
    tet = TriangleMesh(np.array([[1, 0, -s], [-1, 0, -s], [0, 1, s], [0, -1, s]]) / 2,
                       [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    assert mesh_diameter(tet) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        mesh_diameter(TriangleMesh([[0, 0, 0]], np.empty((0, 3))))


@given(st.integers(2, 200), st.integers(0, 10_000))
def test_diameter_matches_brute_force(n, seed):
    V = np.random.default_rng(seed).normal(size=(n, 3)) * 20
    m = TriangleMesh(V, np.empty((0, 3)))
    assert mesh_diameter(m) == pytest.approx(brute_diameter(V), rel=1e-12)


def test_sample_surface_lies_on_mesh():
    m = icosphere(30.0, 2)
    pts, faces = m.sample_surface(500, seed=3, return_faces=True)
    n = m.face_normals[faces]
    a = m.vertices[m.triangles[faces, 0]]
    np.testing.assert_allclose(np.sum((pts - a) * n, axis=1), 0.0, atol=1e-9)


# -- ray casting -----------------------------------------------------------

def test_unit_square_center_depth_and_normal():
    cam = PinholeCamera(100.0, 100.0, 50.0, 50.0, 101, 101)  # identity pose, looks along +z
    sq = SceneModel([SceneInstance(plate(1.0, 1.0, 1), RigidPose(np.eye(3), (0, 0, 500.0)))])
    depth, normals, hits = raycast_view(sq, cam)
    assert depth[50, 50] == pytest.approx(500.0)
    np.testing.assert_allclose(normals[50, 50], (0.0, 0.0, -1.0))
    assert hits[50, 50] == 0


def test_empty_scene_all_missing(camera):
    depth, normals, hits = raycast_view(SceneModel(), camera)
    assert np.isnan(depth).all() and np.isnan(normals).all() and (hits == MISS).all()


def test_sphere_center_depth():
    cam = PinholeCamera(100.0, 100.0, 40.0, 30.0, 81, 61)
    sph = SceneModel([SceneInstance(icosphere(50.0, 5), RigidPose(np.eye(3), (0, 0, 500.0)))])
    depth, _, _ = raycast_view(sph, cam)
    # analytic ray-sphere: the axial ray meets the sphere at 500 - 50; the
    # tessellation sits inside the sphere by at most the chord sagitta
    assert 450.0 - 1e-9 <= depth[30, 40] < 450.0 + 0.05


def test_raycast_matches_brute_force_and_backends_agree():
    cam = front_camera(300.0, 24, 18, 30.0)
    scene = SceneModel([
        SceneInstance(icosphere(40.0, 1), RigidPose.from_euler((10, 20, 0), (-20, 0, 0))),
        SceneInstance(box((50, 30, 20)), RigidPose.from_euler((0, 30, 45), (30, 10, 40))),
    ])
    dirs = cam.ray_directions().reshape(-1, 3)
    tris = world_triangles(scene)
    depth, _, hits = raycast_view(scene, cam)
    for i, d in enumerate(dirs):
        t, _ = brute_first_hit(cam.center, d, tris)
        r, c = divmod(i, cam.width)
        if math.isinf(t):
            assert hits[r, c] == MISS
        else:
            assert depth[r, c] == pytest.approx(t, abs=1e-9)
    mesh = icosphere(40.0, 3)
    o = np.broadcast_to(cam.center, dirs.shape)
    results = [mesh.bvh.intersect(o, dirs, backend=b) for b in BACKENDS]
    for t, tri in results[1:]:
        np.testing.assert_array_equal(tri, results[0][1])
        np.testing.assert_allclose(t, results[0][0], rtol=1e-12)


@pytest.mark.parametrize("backend", list(BACKENDS))
def test_any_hit_and_interval(backend):
    mesh = plate(10.0, 10.0, 2)
    o = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 5.0], [20.0, 0.0, 5.0]])
    d = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
    t, tri = mesh.bvh.intersect(o, d, tmax=np.array([10.0, 4.0, 10.0]), backend=backend)
    assert t[0] == pytest.approx(5.0) and tri[0] >= 0
    assert tri[1] == -1 and tri[2] == -1
    _, anyhit = mesh.bvh.intersect(o, d, any_hit=True, backend=backend)
    assert anyhit[0] >= 0


@pytest.mark.parametrize("backend", list(BACKENDS))
def test_axis_parallel_ray_on_box_face(backend):
    # rays with zero direction components that start on BVH slab planes
    mesh = icosphere(50.0, 4)
    o = np.array([[0.0, 0.0, -500.0], [0.0, -500.0, 0.0], [0.0, 0.0, 500.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]])
    t, tri = mesh.bvh.intersect(o, d, backend=backend)
    assert (tri >= 0).all()
    np.testing.assert_allclose(t, 450.0, atol=0.1)


def test_raycast_deterministic(camera):
    scene = SceneModel([SceneInstance(bent_plate(), RigidPose.from_euler((20, 0, 0)))])
    a = raycast_view(scene, camera)
    b = raycast_view(scene, camera)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("mesh", [icosphere(60.0, 2), box((80, 80, 80))])
def test_convex_silhouette_connected(mesh, camera):
    scene = SceneModel([SceneInstance(mesh, RigidPose.from_euler((30, 40, 0)))])
    _, _, hits = raycast_view(scene, camera)
    _, n = ndimage.label(hits != MISS)
    assert n == 1


def test_normals_face_camera_and_are_unit(camera):
    scene = SceneModel([SceneInstance(icosphere(80.0, 2), RigidPose())])
    depth, normals, hits = raycast_view(scene, camera)
    hit = hits != MISS
    np.testing.assert_allclose(np.linalg.norm(normals[hit], axis=1), 1.0, atol=1e-9)
    assert (np.einsum("ij,ij->i", normals[hit], camera.ray_directions()[hit]) < 0).all()
    assert (depth[hit] > 0).all()


# -- PCA normals -----------------------------------------------------------

def plane_depth(cam, normal, point):
    """Analytic depth of the plane through ``point`` with ``normal``."""
    d = cam.ray_directions()
    t = np.dot(np.asarray(point) - cam.center, normal) / (d @ normal)
    return t


def angle_deg(a, b):
    c = np.abs(np.sum(a * b, axis=-1))
    return np.degrees(np.arccos(np.clip(c, -1, 1)))


def test_pca_fronto_parallel(camera):
    depth = np.full(camera.shape, 400.0)
    n = estimate_normals_pca(depth, camera, k=16)
    ok = np.isfinite(n[..., 0])
    assert ok.mean() > 0.95
    assert angle_deg(n[ok], camera.pose.apply_vectors((0.0, 0.0, -1.0))).max() < 1.0
    # flipped toward the camera
    assert (np.einsum("ij,ij->i", n[ok], camera.ray_directions()[ok]) < 0).all()


@pytest.mark.parametrize("k", [8, 16])
def test_pca_tilted_plane(camera, k):
    normal = np.array([0.0, np.sin(np.pi / 4), np.cos(np.pi / 4)])
    depth = plane_depth(camera, normal, (0, 0, 0))
    n = estimate_normals_pca(depth, camera, k=k)
    ok = np.isfinite(n[..., 0])
    assert ok.mean() > 0.95
    assert angle_deg(n[ok], normal).max() < 2.0


def test_pca_isolated_pixel_missing(camera):
    depth = np.full(camera.shape, np.nan)
    depth[10, 10] = 400.0
    assert np.isnan(estimate_normals_pca(depth, camera)).all()
    with pytest.raises(ValueError):
        estimate_normals_pca(depth, camera, k=2)


def test_pca_degenerate_line_missing(camera):
    depth = np.full(camera.shape, np.nan)
    depth[20, :] = 400.0  # one image row: collinear points, rank 1
    assert np.isnan(estimate_normals_pca(depth, camera, k=8)).all()
