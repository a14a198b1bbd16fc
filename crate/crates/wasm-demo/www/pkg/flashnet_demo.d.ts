/* tslint:disable */
/* eslint-disable */

/**
 * Runs a shocked trial on a generated network and reports the contagion.
 */
export function contagion(n: number, rho: number, beta: number, leverage: number, tau_c: number, seed: bigint): string;

/**
 * Generates a fund-asset network; returns its edges and component sizes.
 */
export function network(n_funds: number, n_assets: number, rho: number, beta: number, alpha: number, seed: bigint): string;

/**
 * Runs one fund holding one asset and shocks it with a distressed seller.
 * Returns the price once per second and the crash timing in steps.
 */
export function shock(eta: number, delta_s: number, steps: bigint, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly contagion: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly network: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly shock: (a: number, b: number, c: bigint, d: bigint) => [number, number, number, number];
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
