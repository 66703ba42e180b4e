/* tslint:disable */
/* eslint-disable */

/**
 * Resolves a click on the room as the Wizard console would and, if it
 * becomes a goal, returns the planned route from the robot's spawn.
 */
export function click(x: number, y: number): string;

/**
 * Speed and distance along a straight drive, one sample per tick, with the
 * brake applied at `cancel_ms` when it is non-negative.
 */
export function profile(distance: number, v_max: number, a_max: number, decel: number, cancel_ms: number, tick_ms: number): string;

/**
 * The starter room: bounds, occupancy grid, objects and the robot.
 */
export function scene(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly click: (a: number, b: number) => [number, number];
    readonly profile: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly scene: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
