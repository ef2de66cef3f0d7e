import asyncio


async def fetch(url):
    await asyncio.sleep(0)
    return url


async def crawl(urls):
    pages = []
    async for page in source(urls):
        pages.append(page)
    return pages
