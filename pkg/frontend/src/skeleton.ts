/** Skeleton topology shared with the generation service: 22 joints,
 * root at index 0, end-effector set fixed by the server contract. */

export const JOINT_COUNT = 22;

export const PARENT: readonly number[] = [
  -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
];

export const END_EFFECTORS: readonly number[] = [0, 10, 11, 15, 20, 21];

/** (child, parent) index pairs for drawing limbs. */
export const BONES: ReadonlyArray<readonly [number, number]> = PARENT.map(
  (p, j) => [j, p] as const,
).filter(([, p]) => p >= 0);

/** Front-view rest pose in model coordinates (x right, y up, meters).
 * Used to seed the draggable stick-figure template. */
export const TEMPLATE_POSE: ReadonlyArray<readonly [number, number]> = [
  [0.0, 0.942],
  [0.09, 0.892],
  [-0.09, 0.892],
  [0.0, 1.052],
  [0.09, 0.56],
  [-0.09, 0.56],
  [0.0, 1.182],
  [0.09, 0.143],
  [-0.09, 0.211],
  [0.0, 1.232],
  [0.09, 0.068],
  [-0.09, 0.089],
  [0.0, 1.442],
  [0.07, 1.412],
  [-0.07, 1.412],
  [0.0, 1.562],
  [0.17, 1.412],
  [-0.17, 1.412],
  [0.43, 1.412],
  [-0.43, 1.412],
  [0.68, 1.412],
  [-0.68, 1.412],
];
