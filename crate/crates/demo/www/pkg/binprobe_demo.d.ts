/* tslint:disable */
/* eslint-disable */

/**
 * Utilization estimate, exact confidence interval and likelihood curve.
 */
export function estimate_json(y: number, n: number, gamma: number): string;

/**
 * Hit probabilities from packet and gap starts over `points` spacings up to
 * `h_max`, with the smallest settled spacing for tolerance `k`.
 */
export function hit_curve_json(mean: number, variance: number, rate: number, h_max: number, points: number, k: number): string;

/**
 * Probes a simulated trace at a fixed spacing and runs the independence
 * diagnostics on the resulting bits.
 */
export function probe_json(mean: number, variance: number, rate: number, spacing: number, probes: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly estimate_json: (a: number, b: number, c: number) => [number, number, number, number];
    readonly hit_curve_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly probe_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
