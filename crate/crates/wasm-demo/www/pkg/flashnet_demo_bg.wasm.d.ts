/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const contagion: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const network: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const shock: (a: number, b: number, c: bigint, d: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
