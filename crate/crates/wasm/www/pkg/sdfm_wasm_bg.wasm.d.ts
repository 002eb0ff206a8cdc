/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const alpha_path: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const rotation_curves: (a: number) => [number, number, number, number];
export const simulate_and_fit: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
