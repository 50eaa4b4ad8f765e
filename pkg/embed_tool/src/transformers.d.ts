// Ambient declaration for the optional model runtime: it is loaded via
// dynamic import and may legitimately be absent at build and run time.
declare module "@xenova/transformers" {
  export function pipeline(
    task: string,
    model?: string,
    options?: object,
  ): Promise<any>;
}
