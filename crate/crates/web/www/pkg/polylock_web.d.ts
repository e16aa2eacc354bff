/* tslint:disable */
/* eslint-disable */

/**
 * Error rate against overhead budget for one random benchmark of `ops` operations.
 */
export function error_rate_curve(ops: number, seed: number, trials: number, max_budget: number): string;

/**
 * The 16 behaviour classes with the keys in each.
 */
export function key_partition(): string;

/**
 * Resolves one 8-bit key (`C1P1C2P2C3P3C4P4`) and routes two 8-bit words through it.
 */
export function resolve_key(bits: string, x: number, y: number, policy: string): string;

/**
 * Schedules the six-operation example graph at `latency` steps.
 */
export function schedule_example(latency: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly error_rate_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly key_partition: () => [number, number];
    readonly resolve_key: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly schedule_example: (a: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
