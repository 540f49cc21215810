// Floor-plane unprojection for both camera modes. World axes follow the
// engine convention: Y up, the floor is the XZ plane.

export interface FloorPoint {
  x: number;
  z: number;
}

/** Orthographic top-down camera: world X right, world Z up the screen. */
export class TopDownCamera {
  constructor(
    public centerX = 0,
    public centerZ = 0,
    public pixelsPerMeter = 80,
    public width = 800,
    public height = 600,
  ) {}

  worldToScreen(x: number, z: number): [number, number] {
    return [
      this.width / 2 + (x - this.centerX) * this.pixelsPerMeter,
      this.height / 2 - (z - this.centerZ) * this.pixelsPerMeter,
    ];
  }

  screenToFloor(px: number, py: number): FloorPoint {
    return {
      x: this.centerX + (px - this.width / 2) / this.pixelsPerMeter,
      z: this.centerZ - (py - this.height / 2) / this.pixelsPerMeter,
    };
  }
}

/**
 * Orbit camera: perspective projection from a point on a sphere around
 * the target, looking at the target. Azimuth rotates about +Y (0 looks
 * along -Z toward +Z); elevation lifts the eye above the floor.
 */
export class OrbitCamera {
  constructor(
    public target: [number, number, number] = [0, 1, 0],
    public distance = 6,
    public azimuth = 0,
    public elevation = 0.7,
    public fovY = Math.PI / 4,
    public width = 800,
    public height = 600,
  ) {}

  eye(): [number, number, number] {
    const ce = Math.cos(this.elevation);
    return [
      this.target[0] + this.distance * ce * Math.sin(this.azimuth),
      this.target[1] + this.distance * Math.sin(this.elevation),
      this.target[2] - this.distance * ce * Math.cos(this.azimuth),
    ];
  }

  /** Camera basis: right, up, forward (all unit, right-handed). */
  basis(): [number[], number[], number[]] {
    const e = this.eye();
    const f = norm3([
      this.target[0] - e[0],
      this.target[1] - e[1],
      this.target[2] - e[2],
    ]);
    const r = norm3(cross3(f, [0, 1, 0]));
    const u = cross3(r, f);
    return [r, u, f];
  }

  /** Project a world point; returns null when behind the camera. */
  worldToScreen(p: [number, number, number]): [number, number] | null {
    const e = this.eye();
    const [r, u, f] = this.basis();
    const d = [p[0] - e[0], p[1] - e[1], p[2] - e[2]];
    const zc = dot3(d, f);
    if (zc <= 1e-6) return null;
    const xc = dot3(d, r);
    const yc = dot3(d, u);
    const scale = this.height / 2 / Math.tan(this.fovY / 2);
    return [this.width / 2 + (xc / zc) * scale, this.height / 2 - (yc / zc) * scale];
  }

  /** Cast a ray through a pixel and intersect the floor plane y = 0. */
  screenToFloor(px: number, py: number): FloorPoint | null {
    const e = this.eye();
    const [r, u, f] = this.basis();
    const scale = this.height / 2 / Math.tan(this.fovY / 2);
    const xc = (px - this.width / 2) / scale;
    const yc = (this.height / 2 - py) / scale;
    const dir = [
      f[0] + xc * r[0] + yc * u[0],
      f[1] + xc * r[1] + yc * u[1],
      f[2] + xc * r[2] + yc * u[2],
    ];
    if (Math.abs(dir[1]) < 1e-12) return null; // ray parallel to the floor
    const t = -e[1] / dir[1];
    if (t <= 0) return null; // floor is behind the camera
    return { x: e[0] + t * dir[0], z: e[2] + t * dir[2] };
  }
}

function cross3(a: number[], b: number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function dot3(a: number[], b: number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function norm3(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}
