// Scene-graph construction: turns frame messages into a deterministic
// list of drawable primitives, independent of any canvas API so it can
// be snapshot-tested.

import { CharacterFrame, FrameMessage, Vec3 } from "./protocol.js";

export interface SkeletonManifest {
  hash: string;
  names: string[];
  parents: number[]; // -1 for the root joint
  heelsToes: number[]; // joint indices matching the 4 contact flags
}

export interface BoneSegment {
  role: string;
  a: Vec3;
  b: Vec3;
}

export interface ContactMark {
  role: string;
  joint: number;
  at: Vec3;
}

export interface PointMark {
  role: string;
  at: Vec3;
}

export interface SceneGraph {
  bones: BoneSegment[];
  contacts: ContactMark[];
  points: PointMark[]; // fallback rendering when the skeleton is unknown
  roles: string[];
}

export const ROLE_COLORS: Record<string, string> = {
  leader: "#d9534f",
  follower: "#428bca",
};

/** Root-relative position -> world, using the planar root frame. */
export function toWorld(root: number[], p: Vec3): Vec3 {
  const [tx, tz, c, s] = root;
  return [tx + c * p[0] + s * p[2], p[1], tz - s * p[0] + c * p[2]];
}

function worldPositions(char: CharacterFrame): Vec3[] {
  return char.positions.map((p) => toWorld(char.root, p));
}

/**
 * Build the drawable scene for one frame. When the manifest's skeleton
 * does not match the frame (wrong hash or joint count) the character is
 * rendered as a raw point cloud instead of bones.
 */
export function buildScene(
  frame: FrameMessage,
  manifest: SkeletonManifest | null,
  expectedHash?: string,
): SceneGraph {
  const scene: SceneGraph = { bones: [], contacts: [], points: [], roles: [] };
  const usable =
    manifest !== null && (expectedHash === undefined || manifest.hash === expectedHash);
  const roles = Object.keys(frame.characters).sort();
  for (const role of roles) {
    scene.roles.push(role);
    const char = frame.characters[role];
    const world = worldPositions(char);
    if (usable && manifest!.parents.length === world.length) {
      for (let j = 0; j < world.length; j++) {
        const parent = manifest!.parents[j];
        if (parent < 0) continue;
        scene.bones.push({ role, a: world[parent], b: world[j] });
      }
      for (let k = 0; k < char.contacts.length; k++) {
        if (char.contacts[k] >= 0.5) {
          const joint = manifest!.heelsToes[k];
          scene.contacts.push({ role, joint, at: world[joint] });
        }
      }
    } else {
      for (const at of world) scene.points.push({ role, at });
    }
  }
  return scene;
}

const fix = (v: number): string => (Object.is(v, -0) ? 0 : v).toFixed(5);

/** Stable text form of a scene for golden-snapshot comparisons. */
export function serializeScene(scene: SceneGraph): string {
  const lines: string[] = [`roles ${scene.roles.join(",")}`];
  for (const b of scene.bones) {
    lines.push(`bone ${b.role} ${b.a.map(fix).join(" ")} -> ${b.b.map(fix).join(" ")}`);
  }
  for (const c of scene.contacts) {
    lines.push(`contact ${c.role} j${c.joint} ${c.at.map(fix).join(" ")}`);
  }
  for (const p of scene.points) {
    lines.push(`point ${p.role} ${p.at.map(fix).join(" ")}`);
  }
  return lines.join("\n");
}
