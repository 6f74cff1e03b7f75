import hashlib
import socket
import threading
import unittest

import numpy as np

from src import sightline
from src.sightline import RegionModel

TILING = sightline.tile_area(sightline.BoundingBox(40.7400, -74.0000, 40.7580, -73.9763), 1000.0, 200.0)


def model_blob(region_id: str = 'r000c000', scale: float = 0.0) -> bytes:
    return sightline.serialize_model(RegionModel(region_id, ('a', 'b'), np.full((2, 4), scale), np.zeros(2)))


class Template(unittest.TestCase):
    server: sightline.RegistryServer = None
    backend_flag = 'thread'

    def setUp(self) -> None:
        self.store = sightline.RegistryStore(TILING)
        self.server = sightline.RegistryServer(self.store, ('127.0.0.1', 0), backend_flag = self.backend_flag)
        self.server.run(block = False, quiet = True)
        self.client = sightline.RegistryClient(self.server.addr, timeout = 5)

    def tearDown(self) -> None:
        self.client.close()
        self.server.terminate()

    def raw_exchange(self, data: bytes) -> sightline.Message:
        with socket.create_connection(self.server.addr, timeout = 5) as conn:
            conn.sendall(data)
            return sightline.read_message(conn)


class TestServer(Template):
    def test_alive(self):
        self.assertTrue(self.server.is_running)
        with self.assertRaises(sightline.NoModelPublished):
            self.client.fetch('r000c000')

    def test_publish_fetch(self):
        blob = model_blob()
        manifest = self.client.publish('r000c000', blob)
        self.assertEqual(manifest, self.store.latest('r000c000'))
        fetched, data = self.client.fetch('r000c000')
        self.assertEqual(fetched, manifest)
        self.assertEqual(data, blob)
        model = sightline.deserialize_model(data)
        self.assertEqual(model.site_ids, ('a', 'b'))

    def test_not_modified(self):
        manifest = self.client.publish('r000c000', model_blob())
        fetched, data = self.client.fetch('r000c000', if_hash = manifest.content_hash)
        self.assertIsNone(data)
        self.assertEqual(fetched, manifest)
        self.client.publish('r000c000', model_blob(scale = 1.0))
        fetched, data = self.client.fetch('r000c000', if_hash = manifest.content_hash)
        self.assertEqual(fetched.version, 2)
        self.assertEqual(data, model_blob(scale = 1.0))

    def test_lookup(self):
        region = TILING.get('r001c001')
        self.client.publish('r001c001', model_blob('r001c001'))
        manifest = self.client.lookup(region.center.lat, region.center.lon)
        self.assertEqual(manifest.region_id, 'r001c001')
        # hysteresis keeps the current region while the point is inside it
        neighbour = TILING.get('r001c002')
        self.client.publish('r001c002', model_blob('r001c002'))
        p = sightline.GeoPoint(region.center.lat, (region.bbox.east + neighbour.bbox.west) / 2 + 1e-5)
        self.assertEqual(self.client.lookup(p.lat, p.lon).region_id, 'r001c002')
        self.assertEqual(self.client.lookup(p.lat, p.lon, 'r001c001').region_id, 'r001c001')

    def test_errors(self):
        with self.assertRaises(sightline.RegionUnknown):
            self.client.fetch('nowhere')
        with self.assertRaises(sightline.OutOfCoverage):
            self.client.lookup(0.0, 0.0)
        with self.assertRaises(sightline.OutOfCoverage):
            self.client.lookup(95.0, 0.0)
        with self.assertRaises(sightline.CorruptModel):
            self.client.publish('r000c000', b'not a model')
        self.client.publish('r000c000', model_blob())
        with self.assertRaises(sightline.VersionUnknown):
            self.client.fetch('r000c000', 7)
        # the connection survives error replies
        self.assertEqual(self.client.fetch('r000c000')[0].version, 1)

    def test_bad_frame(self):
        reply = self.raw_exchange(b'\x00\x00\x00\x02{}')
        self.assertEqual(reply.type, 'ERROR')
        self.assertEqual(reply.header['error'], 'ProtocolError')

    def test_missing_field(self):
        reply = self.raw_exchange(sightline.Message('FETCH', {'version': 1}).generate())
        self.assertEqual(reply.type, 'ERROR')
        self.assertEqual(reply.header['error'], 'ProtocolError')
        reply = self.raw_exchange(sightline.Message('LOOKUP', {'lat': 'north', 'lon': 1.0}).generate())
        self.assertEqual(reply.header['error'], 'ProtocolError')

    def test_reply_type_rejected(self):
        with self.assertLogs(level = 'WARNING') as log:
            reply = self.raw_exchange(sightline.Message('MANIFEST', {}).generate())
        self.assertEqual(reply.header['error'], 'ProtocolError')
        self.assertIn('is not handled by', log.output[0])

    def test_fetch_during_publish(self):
        blobs = [sightline.serialize_model(RegionModel('r000c000', ('a', 'b'), np.full((2, 4096), float(v)),
                                                       np.zeros(2))) for v in range(11)]
        self.client.publish('r000c000', blobs[0])
        start = threading.Barrier(11, timeout = 10)
        fetched, errors = [], []

        def fetcher():
            try:
                with sightline.RegistryClient(self.server.addr, timeout = 5) as client:
                    start.wait()
                    for _ in range(10):
                        fetched.append(client.fetch('r000c000'))
            except Exception as e:
                errors.append(e)

        def publisher():
            try:
                with sightline.RegistryClient(self.server.addr, timeout = 5) as client:
                    start.wait()
                    for blob in blobs[1:]:
                        client.publish('r000c000', blob)
            except Exception as e:
                errors.append(e)

        threads = [threading.Thread(target = fetcher) for _ in range(10)] + [threading.Thread(target = publisher)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(errors, [])
        self.assertEqual(len(fetched), 100)
        for manifest, blob in fetched:
            # every reply is one whole published version
            self.assertEqual(blob, blobs[manifest.version - 1])
            self.assertEqual(hashlib.sha256(blob).hexdigest(), manifest.content_hash)
        self.assertEqual(self.store.latest('r000c000').version, 11)

    def test_round_trip_predictions(self):
        _, dataset, _ = sightline.generate_synthetic(sightline.SynthConfig(num_sites = 4, images_per_site = 10,
                                                                           dimension = 20))
        model = sightline.train_region_model(dataset, sightline.TrainConfig(epochs = 5), 'r000c000')
        self.client.publish('r000c000', sightline.serialize_model(model))
        center = TILING.get('r000c000').center
        manifest = self.client.lookup(center.lat, center.lon)
        _, blob = self.client.fetch(manifest.region_id, manifest.version)
        again = sightline.deserialize_model(blob)
        self.assertEqual(again.site_ids, model.site_ids)
        np.testing.assert_array_equal(again.weights, model.weights)
        np.testing.assert_array_equal(again.biases, model.biases)
        for image in dataset:
            np.testing.assert_array_equal(sightline.predict(again, image.feature).distribution,
                                          sightline.predict(model, image.feature).distribution)

    def test_many_clients(self):
        self.client.publish('r000c000', model_blob())
        clients = [sightline.RegistryClient(self.server.addr, timeout = 5) for _ in range(5)]
        try:
            for _ in range(3):
                for client in clients:
                    self.assertEqual(client.fetch('r000c000')[0].version, 1)
        finally:
            for client in clients:
                client.close()


class TestSingleBackend(Template):
    backend_flag = 'single'

    def test_sequential(self):
        for scale in (0.0, 1.0, 2.0):
            self.client.publish('r000c000', model_blob(scale = scale))
        self.assertEqual([m.version for m in self.store.manifests('r000c000')], [1, 2, 3])
        self.assertEqual(self.client.fetch('r000c000', 2)[1], model_blob(scale = 1.0))


class TestInterface(Template):
    def test_fallback(self):
        def crasher(_):
            return str(1 / 0)  # crash here

        self.server.interface.fetch = crasher
        with self.assertLogs(level = 'WARNING') as log:
            with self.assertRaises(sightline.SightlineError):
                self.client.fetch('r000c000')
        self.assertIn('Exception detected', log.output[0])

    def test_custom_fallback(self):
        manifest = sightline.ModelManifest('r000c000', 0, '', 0)
        interface = sightline.Interface({'FETCH': lambda _: 1 / 0},
                                        fallback = lambda _: sightline.data_reply(manifest, None))
        reply = interface(sightline.fetch_request('r000c000'))
        self.assertEqual(reply.type, 'DATA')
        self.assertTrue(reply.header['not_modified'])
        self.assertEqual(interface.find_handlers(), ('FETCH',))
        self.assertEqual(repr(interface), 'Interface[FETCH]')

    def test_backend_names(self):
        self.assertIs(sightline.backend.get_backend_class('threaded'), sightline.ThreadPoolBackend)
        with self.assertRaises(ValueError):
            sightline.backend.get_backend_class('process')


if __name__ == '__main__':
    unittest.main()
